#include "sigmap/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "sigmap/error.hpp"
#include "sigmap/grid_io.hpp"
#include "sigmap/raytracer.hpp"

namespace sigmap::nn {
namespace {

using nlohmann::json;
using synth::AugmentPair;

enum Stream : std::uint64_t {
  kIsoInit = 1,
  kDirInit = 2,
  kStage1 = 11,
  kStage2 = 12,
  kStage2Sparse = 13,
  kStage2Val = 14,
};

constexpr std::string_view kCheckpointMagic{"SIGMAPCKPT\0v1", 13};

Tensor<float> stack(const std::vector<const AugmentPair*>& batch) {
  const auto& first = batch.front()->inputs;
  const int c = static_cast<int>(first.size());
  const int w = first[0].width(), h = first[0].height();
  Tensor<float> t({static_cast<int>(batch.size()), c, h, w});
  auto* dst = t.data().data();
  for (const auto* s : batch)
    for (const auto& ch : s->inputs) dst = std::copy(ch.storage().begin(), ch.storage().end(), dst);
  return t;
}

void stack_targets(const std::vector<const AugmentPair*>& batch, std::vector<float>& target,
                   std::vector<std::uint8_t>& mask) {
  target.clear();
  mask.clear();
  for (const auto* s : batch) {
    target.insert(target.end(), s->target.storage().begin(), s->target.storage().end());
    mask.insert(mask.end(), s->mask.storage().begin(), s->mask.storage().end());
  }
}

double eval_loss(UNet<float>& net, const std::vector<AugmentPair>& samples) {
  NoGradGuard ng;
  double total = 0.0;
  std::vector<float> target;
  std::vector<std::uint8_t> mask;
  for (const auto& s : samples) {
    const std::vector<const AugmentPair*> one{&s};
    stack_targets(one, target, mask);
    total += masked_mse(net.forward(stack(one), false), target, mask).item();
  }
  return total / static_cast<double>(samples.size());
}

// Shared epoch loop: shuffled sample ids, minibatch Adam, validation after
// every epoch, best-by-validation weights restored at the end.
TrainHistory fit(UNet<float>& net, const TrainConfig& cfg, std::uint64_t stage_seed, std::size_t samples_per_epoch,
                 const std::function<AugmentPair(int epoch, std::uint64_t id)>& make_sample,
                 const std::vector<AugmentPair>& val, const EpochCallback& on_epoch) {
  if (samples_per_epoch < 2) throw ConstraintError("training split needs at least two samples");
  if (val.empty()) throw ConstraintError("validation split is empty");
  net.set_requires_grad(true);
  Adam<float> opt(net.parameters(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  TrainHistory hist;
  hist.best_val_loss = std::numeric_limits<double>::infinity();
  UNet<float> best = net.clone();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  std::vector<float> target;
  std::vector<std::uint8_t> mask;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::uint64_t> ids(samples_per_epoch);
    std::iota(ids.begin(), ids.end(), 0);
    Rng rng(derive_seed(stage_seed, static_cast<std::uint64_t>(epoch)));
    shuffle(std::span<std::uint64_t>(ids), rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < ids.size(); b0 += bs) {
      const std::size_t b1 = std::min(ids.size(), b0 + bs);
      if (b1 - b0 < 2) break;  // batch norm needs two samples
      std::vector<AugmentPair> owned;
      owned.reserve(b1 - b0);
      for (std::size_t i = b0; i < b1; ++i) owned.push_back(make_sample(epoch, ids[i]));
      std::vector<const AugmentPair*> batch;
      for (const auto& s : owned) batch.push_back(&s);
      stack_targets(batch, target, mask);
      auto loss = masked_mse(net.forward(stack(batch), true), target, mask);
      loss.backward();
      opt.step();
      opt.zero_grad();
      loss_sum += loss.item();
      ++batches;
    }
    EpochRecord rec{epoch + 1, loss_sum / std::max(1, batches), eval_loss(net, val)};
    hist.epochs.push_back(rec);
    if (rec.val_loss < hist.best_val_loss) {
      hist.best_val_loss = rec.val_loss;
      hist.best_epoch = rec.epoch;
      best.copy_from(net);
    }
    if (on_epoch) on_epoch(rec);
  }
  net.copy_from(best);
  net.set_requires_grad(false);
  return hist;
}

AugmentPair stage1_pair(const AreaData& a) {
  AugmentPair p;
  p.inputs = {building_channel(a.building), db_channel(a.uma)};
  p.target = db_channel(a.iso);
  p.mask = trainable_mask(a.iso);
  return p;
}

// Network output for the isotropic stage, with building pixels zeroed.
FloatGrid iso_output(UNet<float>& iso, const FloatGrid& b, const FloatGrid& uma) {
  NoGradGuard ng;
  AugmentPair p;
  p.inputs = {b, uma};
  const auto out = iso.forward(stack({&p}), false);
  FloatGrid g(b.width(), b.height());
  for (std::size_t i = 0; i < g.size(); ++i) g.storage()[i] = b.storage()[i] > 0.0f ? 0.0f : out.data()[i];
  return g;
}

json config_json(const UNetConfig& c, bool trained) {
  return {{"in_channels", c.in_channels}, {"base_channels", c.base_channels}, {"depth", c.depth},
          {"out_channels", c.out_channels}, {"trained", trained}};
}

UNetConfig config_from(const json& j) {
  UNetConfig c{j.at("in_channels").get<int>(), j.at("base_channels").get<int>(), j.at("depth").get<int>(),
               j.at("out_channels").get<int>()};
  c.validate();
  return c;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename F>
void for_each_blob(CascadedModel& m, F&& f) {
  for (auto* net : {&m.iso, &m.dir}) {
    const std::string prefix = net == &m.iso ? "iso." : "dir.";
    for (auto& [name, t] : net->named_parameters()) f(prefix + name, t.data());
    for (auto& [name, buf] : net->named_buffers()) f(prefix + name, *buf);
  }
}

std::uint32_t crc_floats(const std::vector<float>& v, std::uint32_t crc = 0) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 * v.size());
  for (float x : v) put_u32(bytes, std::bit_cast<std::uint32_t>(x));
  return static_cast<std::uint32_t>(::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size())));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  const std::uint8_t* take(std::size_t n) {
    if (b_.size() - pos_ < n) throw InputError("checkpoint truncated");
    const auto* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | static_cast<std::uint64_t>(u32()) << 32;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 2) throw ConfigError("batch size must be at least 2 (batch norm)");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (sparse_min < 1 || sparse_max < sparse_min) throw ConfigError("sparse range must satisfy 1 <= min <= max");
  if (val_sparse < 1) throw ConfigError("validation sparse count must be positive");
}

CascadedModel CascadedModel::create(int base_channels, std::uint64_t seed) {
  CascadedModel m;
  m.iso = UNet<float>({2, base_channels, 4, 1}, derive_seed(seed, kIsoInit));
  m.dir = UNet<float>({3, base_channels, 4, 1}, derive_seed(seed, kDirInit));
  return m;
}

AreaData load_area(const synth::DatasetManifest& m, std::size_t index) {
  const auto& e = m.entries.at(index);
  AreaData a;
  a.building = io::load_building_map(m.resolve(e.building));
  a.uma = io::load_pg_map(m.resolve(e.uma));
  a.iso = io::load_pg_map(m.resolve(e.iso));
  for (int k = 0; k < synth::kDirectionalMaps; ++k) a.ss[k] = io::load_ss_map(m.resolve(e.ss[k]));
  return a;
}

FloatGrid building_channel(const geo::BuildingMap& b) {
  FloatGrid g(b.heights.width(), b.heights.height());
  for (std::size_t i = 0; i < g.size(); ++i)
    g.storage()[i] = static_cast<float>(synth::normalize_height(b.heights.storage()[i]));
  return g;
}

template <typename Tag>
FloatGrid db_channel(const MaskedMap<Tag>& m) {
  FloatGrid g(m.width(), m.height(), 0.0f);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!m.mask.storage()[i]) g.storage()[i] = static_cast<float>(synth::normalize_db(m.values.storage()[i]));
  return g;
}
template FloatGrid db_channel(const PGMap&);
template FloatGrid db_channel(const SSMap&);

MaskGrid trainable_mask(const PGMap& traced) {
  MaskGrid m = traced.mask;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (traced.values.storage()[i] <= rt::kFloorDb + 1.0) m.storage()[i] = 1;
  return m;
}

synth::SparseSSMap training_sparse(const SSMap& ss, const TrainConfig& cfg, int epoch, std::uint64_t sample) {
  Rng rng(derive_seed(derive_seed(derive_seed(cfg.seed, kStage2Sparse), static_cast<std::uint64_t>(epoch)), sample));
  const auto outdoor = static_cast<std::int64_t>(ss.unmasked_count());
  const auto n = std::min<std::int64_t>(uniform_int(rng, cfg.sparse_min, cfg.sparse_max), outdoor);
  return synth::sample_sparse(ss, static_cast<std::size_t>(n), rng);
}

TrainHistory train_stage1(CascadedModel& model, const synth::DatasetManifest& m, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train_idx = m.indices(synth::Split::train), val_idx = m.indices(synth::Split::val);
  if (train_idx.empty() || val_idx.empty()) throw ConstraintError("stage 1 needs non-empty train and val splits");
  std::vector<AugmentPair> train, val;
  for (auto i : train_idx) train.push_back(stage1_pair(load_area(m, i)));
  for (auto i : val_idx) val.push_back(stage1_pair(load_area(m, i)));

  const std::uint64_t stage_seed = derive_seed(cfg.seed, kStage1);
  auto make = [&](int epoch, std::uint64_t id) {
    Rng rng(derive_seed(derive_seed(stage_seed ^ 0xA5A5u, static_cast<std::uint64_t>(epoch)), id));
    const int variant = cfg.augment ? static_cast<int>(uniform_int(rng, 0, 7)) : 0;
    return synth::augment(train[id], variant);
  };
  auto hist = fit(model.iso, cfg, stage_seed, train.size(), make, val, on_epoch);
  model.iso_trained = true;
  return hist;
}

TrainHistory train_stage2(CascadedModel& model, const synth::DatasetManifest& m, const TrainConfig& cfg,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  if (!model.iso_trained) throw ConfigError("stage 2 needs a trained isotropic stage (missing checkpoint)");
  const auto train_idx = m.indices(synth::Split::train), val_idx = m.indices(synth::Split::val);
  if (train_idx.empty() || val_idx.empty()) throw ConstraintError("stage 2 needs non-empty train and val splits");
  model.iso.set_requires_grad(false);

  struct Area {
    AreaData data;
    FloatGrid b;
    FloatGrid uma;
    MaskGrid mask;
    std::array<FloatGrid, synth::kDirectionalMaps> target;
  };
  auto prepare = [&](std::size_t i) {
    Area a;
    a.data = load_area(m, i);
    a.b = building_channel(a.data.building);
    a.uma = db_channel(a.data.uma);
    a.mask = trainable_mask(a.data.iso);
    // Unreached pixels carry no measurable signal: never sampled, never scored.
    for (int k = 0; k < synth::kDirectionalMaps; ++k) {
      a.data.ss[k].mask = a.mask;
      a.target[k] = db_channel(a.data.ss[k]);
    }
    return a;
  };
  std::vector<Area> train, val_areas;
  for (auto i : train_idx) train.push_back(prepare(i));
  for (auto i : val_idx) val_areas.push_back(prepare(i));

  // Frozen stage-1 outputs per (area, D4 variant), filled on first use.
  std::map<std::uint64_t, FloatGrid> iso_cache;
  auto iso_for = [&](std::size_t area, int variant) -> const FloatGrid& {
    const std::uint64_t key = area * synth::kD4Variants + static_cast<std::uint64_t>(variant);
    auto it = iso_cache.find(key);
    if (it == iso_cache.end()) {
      const auto& a = train[area];
      it = iso_cache
               .emplace(key, iso_output(model.iso, synth::transform_d4(a.b, variant), synth::transform_d4(a.uma, variant)))
               .first;
    }
    return it->second;
  };

  std::vector<AugmentPair> val;
  for (std::size_t v = 0; v < val_areas.size(); ++v) {
    const auto& a = val_areas[v];
    const auto iso = iso_output(model.iso, a.b, a.uma);
    for (int k = 0; k < synth::kDirectionalMaps; ++k) {
      Rng rng(derive_seed(derive_seed(cfg.seed, kStage2Val), v * synth::kDirectionalMaps + k));
      const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.val_sparse), a.data.ss[k].unmasked_count());
      const auto sparse = synth::sample_sparse(a.data.ss[k], n, rng);
      val.push_back({{a.b, iso, synth::encode_sparse_channel(sparse, a.data.ss[k].area)}, a.target[k], a.mask});
    }
  }

  const std::uint64_t stage_seed = derive_seed(cfg.seed, kStage2);
  const std::size_t per_area = cfg.all_orientations ? synth::kDirectionalMaps : 1;
  auto make = [&](int epoch, std::uint64_t id) {
    Rng rng(derive_seed(derive_seed(stage_seed ^ 0xA5A5u, static_cast<std::uint64_t>(epoch)), id));
    const std::size_t area = id / per_area;
    const int k = cfg.all_orientations ? static_cast<int>(id % per_area)
                                       : static_cast<int>(uniform_int(rng, 0, synth::kDirectionalMaps - 1));
    const int variant = cfg.augment ? static_cast<int>(uniform_int(rng, 0, 7)) : 0;
    const auto& a = train[area];
    const auto sparse = training_sparse(a.data.ss[k], cfg, epoch, id);
    AugmentPair p;
    p.inputs = {synth::transform_d4(a.b, variant), iso_for(area, variant),
                synth::transform_d4(synth::encode_sparse_channel(sparse, a.data.ss[k].area), variant)};
    p.target = synth::transform_d4(a.target[k], variant);
    p.mask = synth::transform_d4(a.mask, variant);
    return p;
  };
  auto hist = fit(model.dir, cfg, stage_seed, train.size() * per_area, make, val, on_epoch);
  model.dir_trained = true;
  return hist;
}

PGMap predict_iso(CascadedModel& model, const geo::BuildingMap& b, const PGMap& uma) {
  if (!model.iso_trained) throw ConfigError("isotropic stage is untrained");
  const auto out = iso_output(model.iso, building_channel(b), db_channel(uma));
  PGMap pg(b.area);
  pg.mask = building_mask(b);
  for (std::size_t i = 0; i < out.size(); ++i)
    pg.values.storage()[i] = pg.mask.storage()[i] ? 0.0f : static_cast<float>(synth::denormalize_db(out.storage()[i]));
  return pg;
}

SSMap predict_ss(CascadedModel& model, const geo::BuildingMap& b, const PGMap& uma, const synth::SparseSSMap& sparse) {
  if (!model.iso_trained || !model.dir_trained) throw ConfigError("cascaded model is untrained");
  if (!(uma.area == b.area) || !(sparse.area == b.area)) throw InputError("prediction inputs cover different areas");
  const auto bc = building_channel(b);
  AugmentPair p;
  p.inputs = {bc, iso_output(model.iso, bc, db_channel(uma)), synth::encode_sparse_channel(sparse, b.area)};
  NoGradGuard ng;
  const auto out = model.dir.forward(stack({&p}), false);
  SSMap ss(b.area);
  ss.mask = building_mask(b);
  for (std::size_t i = 0; i < ss.values.size(); ++i)
    ss.values.storage()[i] = ss.mask.storage()[i] ? 0.0f : static_cast<float>(synth::denormalize_db(out.data()[i]));
  return ss;
}

std::uint32_t parameter_checksum(UNet<float>& net) {
  std::uint32_t crc = 0;
  for (auto& [name, t] : net.named_parameters()) crc = crc_floats(t.data(), crc);
  for (auto& [name, buf] : net.named_buffers()) crc = crc_floats(*buf, crc);
  return crc;
}

void save_checkpoint(const std::filesystem::path& path, CascadedModel& model) {
  const json header = {{"version", 1},
                       {"iso", config_json(model.iso.config(), model.iso_trained)},
                       {"dir", config_json(model.dir.config(), model.dir_trained)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  std::uint32_t count = 0;
  for_each_blob(model, [&](const std::string&, const std::vector<float>&) { ++count; });
  put_u32(out, count);
  for_each_blob(model, [&](const std::string& name, const std::vector<float>& v) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u64(out, v.size());
    for (float x : v) put_u32(out, std::bit_cast<std::uint32_t>(x));
    put_u32(out, crc_floats(v));
  });
  io::write_atomic(path, out);
}

CascadedModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_bytes(path);
  const auto where = path.string() + ": ";
  if (bytes.size() < kCheckpointMagic.size() ||
      !std::equal(kCheckpointMagic.begin(), kCheckpointMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw InputError(where + "not a checkpoint (bad magic)");
  }
  Reader r(bytes);
  r.take(kCheckpointMagic.size());
  CascadedModel m;
  try {
    const std::uint32_t hlen = r.u32();
    const auto* h = r.take(hlen);
    const json header = json::parse(h, h + hlen);
    if (header.at("version").get<int>() != 1) throw InputError("unsupported checkpoint version");
    m.iso = UNet<float>(config_from(header.at("iso")), 0);
    m.dir = UNet<float>(config_from(header.at("dir")), 0);
    m.iso_trained = header["iso"].at("trained").get<bool>();
    m.dir_trained = header["dir"].at("trained").get<bool>();

    std::map<std::string, std::vector<float>> blobs;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t nlen = r.u32();
      const auto* np = r.take(nlen);
      std::string name(reinterpret_cast<const char*>(np), nlen);
      const std::uint64_t n = r.u64();
      if (n > bytes.size() / 4) throw InputError("checkpoint truncated");
      std::vector<float> v(n);
      for (auto& x : v) x = std::bit_cast<float>(r.u32());
      if (r.u32() != crc_floats(v)) throw InputError("CRC mismatch in tensor " + name);
      blobs.emplace(std::move(name), std::move(v));
    }
    if (!r.done()) throw InputError("trailing bytes after checkpoint tensors");
    for_each_blob(m, [&](const std::string& name, std::vector<float>& v) {
      auto it = blobs.find(name);
      if (it == blobs.end()) throw InputError("checkpoint lacks tensor " + name);
      if (it->second.size() != v.size()) throw InputError("checkpoint tensor " + name + " has the wrong size");
      v = it->second;
    });
  } catch (const json::exception& e) {
    throw InputError(where + "bad checkpoint header: " + e.what());
  } catch (const InputError& e) {
    throw InputError(where + e.what());
  }
  m.iso.set_requires_grad(false);
  m.dir.set_requires_grad(false);
  return m;
}

}  // namespace sigmap::nn
