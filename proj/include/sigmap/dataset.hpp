#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sigmap/geodata.hpp"
#include "sigmap/raytracer.hpp"
#include "sigmap/synth.hpp"

namespace sigmap::synth {

inline constexpr int kDirectionalMaps = 4;

enum class Split { train, val };

struct ManifestEntry {
  std::string area_id;
  Split split = Split::train;
  // Paths relative to the manifest directory.
  std::string building;
  std::string uma;
  std::string iso;
  std::array<std::string, kDirectionalMaps> dir;
  std::array<std::string, kDirectionalMaps> ss;
  // Generation record.
  double tx_height_m = 0.0;
  double building_ratio = 0.0;
  std::array<double, kDirectionalMaps> azimuth_deg{};
  std::array<LinkBudgetDraw, kDirectionalMaps> link_budget{};
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  double carrier_freq_hz = 0.0;
  double downtilt_deg = 0.0;
  std::vector<ManifestEntry> entries;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  std::vector<std::size_t> indices(Split s) const;
  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

/// Applies split_indices to the entries in place.
void split_dataset(DatasetManifest& manifest, double train_ratio, std::uint64_t seed);

std::string manifest_to_json(const DatasetManifest& m);
/// Throws InputError when the document is malformed or a listed file is
/// missing.
DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& root);
DatasetManifest load_manifest(const std::filesystem::path& path);

struct DatasetConfig {
  std::size_t n_areas = 64;
  std::uint64_t seed = 1;
  geo::GeoArea area = geo::default_area();
  double carrier_freq_hz = 3.66e9;
  double rx_height_m = 2.0;
  double downtilt_deg = 10.0;
  double train_ratio = 0.8;
  rt::RtConfig rt;
};

/// Per area: procedural buildings, UMa map, traced isotropic map, four
/// directional maps with random azimuths and one link-budget SS map each.
/// Files are written atomically; manifest.json is written last.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace sigmap::synth
