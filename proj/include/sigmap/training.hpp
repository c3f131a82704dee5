#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sigmap/dataset.hpp"
#include "sigmap/maps.hpp"
#include "sigmap/unet.hpp"

namespace sigmap::nn {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 4;
  int epochs = 30;
  std::uint64_t seed = 1;
  bool augment = true;
  int sparse_min = 1;
  int sparse_max = 200;
  int val_sparse = 100;  // fixed sparse count for stage-2 validation
  /// Stage 2 visits every directional map of every area each epoch;
  /// otherwise one randomly chosen map per area.
  bool all_orientations = true;

  /// Throws ConfigError unless counts are positive and the sparse range is
  /// ordered.
  void validate() const;
  static TrainConfig paper_scale() {
    TrainConfig c;
    c.batch_size = 64;
    c.epochs = 200;
    return c;
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct CascadedModel {
  UNet<float> iso;  // [building; UMa PG] -> isotropic PG
  UNet<float> dir;  // [building; predicted iso PG; sparse SS] -> SS
  bool iso_trained = false;
  bool dir_trained = false;

  static CascadedModel create(int base_channels, std::uint64_t seed);
};

/// One area's grids, as stored by the dataset generator.
struct AreaData {
  geo::BuildingMap building;
  PGMap uma;
  PGMap iso;
  std::array<SSMap, synth::kDirectionalMaps> ss;
};
AreaData load_area(const synth::DatasetManifest& m, std::size_t index);

// Network channel encodings (see synth normalization constants).
FloatGrid building_channel(const geo::BuildingMap& b);
/// normalize_db on unmasked pixels, 0 under the mask.
template <typename Tag>
FloatGrid db_channel(const MaskedMap<Tag>& m);
/// Buildings plus pixels that no traced path reached.
MaskGrid trainable_mask(const PGMap& traced);

/// Sparse draw used for stage-2 training sample `sample` of `epoch`: a
/// pure function of its arguments.
synth::SparseSSMap training_sparse(const SSMap& ss, const TrainConfig& cfg, int epoch, std::uint64_t sample);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Fits model.iso on [B; P_UMa] -> P_iso and keeps the epoch with the
/// lowest validation loss. Throws ConstraintError on an empty split.
TrainHistory train_stage1(CascadedModel& model, const synth::DatasetManifest& m, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// Fits model.dir with model.iso frozen. Throws ConfigError when the
/// isotropic stage is untrained.
TrainHistory train_stage2(CascadedModel& model, const synth::DatasetManifest& m, const TrainConfig& cfg,
                          const EpochCallback& on_epoch = {});

/// Stage-1 forward in eval mode.
PGMap predict_iso(CascadedModel& model, const geo::BuildingMap& b, const PGMap& uma);
/// Cascaded forward; building pixels masked. Throws ConfigError on an
/// untrained model.
SSMap predict_ss(CascadedModel& model, const geo::BuildingMap& b, const PGMap& uma, const synth::SparseSSMap& sparse);

/// CRC32 over every parameter and running statistic.
std::uint32_t parameter_checksum(UNet<float>& net);

void save_checkpoint(const std::filesystem::path& path, CascadedModel& model);
/// Throws InputError on bad magic, CRC mismatch, truncation or missing
/// tensors.
CascadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace sigmap::nn
