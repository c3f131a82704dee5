#include "sigmap/dataset.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

#include "sigmap/error.hpp"
#include "sigmap/grid_io.hpp"
#include "sigmap/parallel.hpp"
#include "sigmap/propagation.hpp"

namespace sigmap::synth {
namespace {

using nlohmann::json;

enum Stream : std::uint64_t { kLayout = 1, kAzimuth = 2, kBudget = 3, kSplit = 0x5917 };

json budget_json(const LinkBudgetDraw& d) {
  return {{"p_tx_dbm", d.p_tx}, {"g_tx_db", d.g_tx}, {"g_rx_db", d.g_rx}, {"il_db", d.il}};
}

LinkBudgetDraw budget_from(const json& j) {
  return {j.at("p_tx_dbm").get<double>(), j.at("g_tx_db").get<double>(), j.at("g_rx_db").get<double>(),
          j.at("il_db").get<double>()};
}

std::string area_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "area_%04zu", i);
  return buf;
}

}  // namespace

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == s) out.push_back(i);
  return out;
}

void split_dataset(DatasetManifest& manifest, double train_ratio, std::uint64_t seed) {
  const auto is_val = split_indices(manifest.entries.size(), train_ratio, seed);
  for (std::size_t i = 0; i < is_val.size(); ++i) manifest.entries[i].split = is_val[i] ? Split::val : Split::train;
}

std::string manifest_to_json(const DatasetManifest& m) {
  json entries = json::array();
  for (const auto& e : m.entries) {
    json budgets = json::array();
    for (const auto& b : e.link_budget) budgets.push_back(budget_json(b));
    entries.push_back({{"area_id", e.area_id},
                       {"split", e.split == Split::val ? "val" : "train"},
                       {"files", {{"building", e.building}, {"uma", e.uma}, {"iso", e.iso}, {"dir", e.dir}, {"ss", e.ss}}},
                       {"tx_height_m", e.tx_height_m},
                       {"building_ratio", e.building_ratio},
                       {"azimuth_deg", e.azimuth_deg},
                       {"link_budget", budgets}});
  }
  const json doc = {{"version", m.version},
                    {"seed", m.seed},
                    {"carrier_freq_hz", m.carrier_freq_hz},
                    {"downtilt_deg", m.downtilt_deg},
                    {"entries", entries}};
  return doc.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::filesystem::path& root) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("bad manifest: ") + e.what(), e.byte);
  }
  DatasetManifest m;
  m.root = root;
  try {
    m.version = doc.at("version").get<int>();
    if (m.version != 1) throw InputError("unsupported manifest version " + std::to_string(m.version));
    m.seed = doc.at("seed").get<std::uint64_t>();
    m.carrier_freq_hz = doc.at("carrier_freq_hz").get<double>();
    m.downtilt_deg = doc.value("downtilt_deg", 0.0);
    for (const auto& j : doc.at("entries")) {
      ManifestEntry e;
      e.area_id = j.at("area_id").get<std::string>();
      const auto split = j.at("split").get<std::string>();
      if (split != "train" && split != "val") throw InputError("bad split '" + split + "'");
      e.split = split == "val" ? Split::val : Split::train;
      const auto& f = j.at("files");
      e.building = f.at("building").get<std::string>();
      e.uma = f.at("uma").get<std::string>();
      e.iso = f.at("iso").get<std::string>();
      e.dir = f.at("dir").get<std::array<std::string, kDirectionalMaps>>();
      e.ss = f.at("ss").get<std::array<std::string, kDirectionalMaps>>();
      e.tx_height_m = j.value("tx_height_m", 0.0);
      e.building_ratio = j.value("building_ratio", 0.0);
      if (j.contains("azimuth_deg")) e.azimuth_deg = j["azimuth_deg"].get<std::array<double, kDirectionalMaps>>();
      if (j.contains("link_budget")) {
        const auto& lb = j["link_budget"];
        if (lb.size() != kDirectionalMaps) throw InputError("link_budget needs 4 entries");
        for (int k = 0; k < kDirectionalMaps; ++k) e.link_budget[k] = budget_from(lb[k]);
      }
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("bad manifest: ") + e.what());
  }
  for (const auto& e : m.entries) {
    std::vector<const std::string*> files{&e.building, &e.uma, &e.iso};
    for (const auto& p : e.dir) files.push_back(&p);
    for (const auto& p : e.ss) files.push_back(&p);
    for (const auto* p : files)
      if (!std::filesystem::is_regular_file(m.resolve(*p)))
        throw InputError("manifest entry " + e.area_id + " lists missing file " + m.resolve(*p).string());
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  return manifest_from_json(io::read_text(path), path.parent_path());
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.n_areas < 1) throw ConfigError("dataset needs at least one area");
  cfg.rt.validate();
  cfg.area.validate();

  DatasetManifest m;
  m.seed = cfg.seed;
  m.carrier_freq_hz = cfg.carrier_freq_hz;
  m.downtilt_deg = cfg.downtilt_deg;
  m.root = out_dir;
  m.entries.resize(cfg.n_areas);

  parallel_chunks(cfg.n_areas, cfg.n_areas, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const std::uint64_t area_seed = derive_seed(cfg.seed, i);
      const auto name = area_name(i);
      auto& entry = m.entries[i];
      entry.area_id = name;

      const auto proc = generate_procedural_area(derive_seed(area_seed, kLayout), cfg.area);
      const auto& map = proc.map;
      const auto scene = geo::extrude(proc.footprints);

      prop::CellConfig cell;
      cell.carrier_freq_hz = cfg.carrier_freq_hz;
      cell.tx_height_m = prop::default_tx_height(map);
      cell.rx_height_m = cfg.rx_height_m;
      entry.tx_height_m = cell.tx_height_m;
      entry.building_ratio = geo::building_ratio(map);

      auto rt_cfg = cfg.rt;
      rt_cfg.rx_height_m = cfg.rx_height_m;
      const auto paths = rt::trace_paths(scene, map, cell, rt_cfg);

      const auto file = [&](const std::string& stem) { return name + "/" + stem + ".grd"; };
      entry.building = file("building");
      entry.uma = file("uma");
      entry.iso = file("iso");
      io::save_grid(out_dir / entry.building, io::to_grid_file(map));
      io::save_grid(out_dir / entry.uma, io::to_grid_file(prop::uma_pg_map(map, cell)));
      io::save_grid(out_dir / entry.iso, io::to_grid_file(rt::render_pg_map(paths, cell)));

      Rng az_rng(derive_seed(area_seed, kAzimuth));
      Rng lb_rng(derive_seed(area_seed, kBudget));
      auto dir_cell = cell;
      dir_cell.antenna = prop::AntennaSpec::directional();
      dir_cell.downtilt_deg = cfg.downtilt_deg;
      for (int k = 0; k < kDirectionalMaps; ++k) {
        dir_cell.azimuth_deg = uniform(az_rng, 0.0, 360.0);
        entry.azimuth_deg[k] = dir_cell.azimuth_deg;
        entry.link_budget[k] = draw_link_budget(lb_rng);
        const auto pg = rt::render_pg_map(paths, dir_cell);
        entry.dir[k] = file("dir" + std::to_string(k));
        entry.ss[k] = file("ss" + std::to_string(k));
        io::save_grid(out_dir / entry.dir[k], io::to_grid_file(pg));
        io::save_grid(out_dir / entry.ss[k], io::to_grid_file(apply_link_budget(pg, entry.link_budget[k])));
      }
    }
  });

  split_dataset(m, cfg.train_ratio, derive_seed(cfg.seed, kSplit));
  io::write_atomic(out_dir / "manifest.json", manifest_to_json(m));
  return m;
}

}  // namespace sigmap::synth
