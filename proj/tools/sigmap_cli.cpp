// sigmap command-line tool: every pipeline stage as a subcommand writing
// into its --out directory.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "sigmap/dataset.hpp"
#include "sigmap/error.hpp"
#include "sigmap/eval.hpp"
#include "sigmap/geodata.hpp"
#include "sigmap/grid_io.hpp"
#include "sigmap/parallel.hpp"
#include "sigmap/propagation.hpp"
#include "sigmap/raytracer.hpp"
#include "sigmap/synth.hpp"
#include "sigmap/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sigmap;

namespace {

constexpr int kConfigSchemaVersion = 1;
constexpr double kRenderLowDbm = -150.0;
constexpr double kRenderHighDbm = -40.0;
constexpr double kRenderHeightM = 40.0;

void log(const std::string& msg) { std::cerr << "[sigmap] " << msg << '\n'; }

// JSON config files: top-level keys are global options, nested objects are
// subcommand sections. Underscores in keys stand for dashes.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("config file is not valid JSON: ") + e.what(), e.byte);
    }
    if (!j.is_object()) throw InputError("config file must hold a JSON object");
    if (j.value("version", kConfigSchemaVersion) != kConfigSchemaVersion)
      throw InputError("unsupported config schema version " + j["version"].dump());
    j.erase("version");
    std::vector<CLI::ConfigItem> items;
    add(j, {}, items);
    return items;
  }

 private:
  static void add(const json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      std::string name = key;
      std::replace(name.begin(), name.end(), '_', '-');
      if (value.is_object()) {
        auto p = parents;
        p.push_back(name);
        add(value, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = name;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
  static std::string scalar(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }
};

void log_resolved(const CLI::App& sub, int threads) {
  json opts = json::object();
  for (const auto* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || opt->get_lnames().empty()) continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      opts[name] = r.size() == 1 ? json(r[0]) : json(r);
    } else {
      opts[name] = opt->get_default_str();
    }
  }
  log("resolved config " + json{{"command", sub.get_name()}, {"threads", threads}, {"options", opts}}.dump());
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("SIGMAP_THREADS"); env && *env) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(env, &used);
      if (used == std::strlen(env) && n > 0) return n;
    } catch (const std::exception&) {
    }
    throw InputError(std::string("SIGMAP_THREADS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

fs::path prepare_out(const std::string& out) {
  fs::path p(out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw InputError("cannot create output directory " + out + ": " + ec.message());
  return p;
}

void write_json(const fs::path& path, const json& j) { io::write_atomic(path, j.dump(2) + "\n"); }

struct CellOptions {
  double freq_hz = prop::kDefaultCarrierHz;
  std::optional<double> tx_height_m;
  double rx_height_m = 2.0;
  std::optional<double> tx_x_m;
  std::optional<double> tx_y_m;
  double azimuth_deg = 0.0;
  double downtilt_deg = 0.0;
  std::string antenna = "isotropic";

  void attach(CLI::App* sub) {
    sub->add_option("--freq-hz", freq_hz, "carrier frequency")->capture_default_str();
    sub->add_option("--tx-height", tx_height_m, "TX height in m (default: 5 m above the tallest building)");
    sub->add_option("--rx-height", rx_height_m, "receiver height in m")->capture_default_str();
    sub->add_option("--tx-x", tx_x_m, "TX east offset in m (default: area center)");
    sub->add_option("--tx-y", tx_y_m, "TX north offset in m (default: area center)");
    sub->add_option("--azimuth", azimuth_deg, "boresight azimuth, degrees clockwise from north")->capture_default_str();
    sub->add_option("--downtilt", downtilt_deg, "boresight downtilt in degrees")->capture_default_str();
    sub->add_option("--antenna", antenna, "antenna pattern")
        ->check(CLI::IsMember({"isotropic", "directional"}))
        ->capture_default_str();
  }

  prop::CellConfig resolve(const geo::BuildingMap& map) const {
    prop::CellConfig c;
    c.carrier_freq_hz = freq_hz;
    c.tx_height_m = tx_height_m.value_or(prop::default_tx_height(map));
    c.rx_height_m = rx_height_m;
    if (tx_x_m || tx_y_m) c.position = Vec2{tx_x_m.value_or(map.area.center().x), tx_y_m.value_or(map.area.center().y)};
    c.azimuth_deg = azimuth_deg;
    c.downtilt_deg = downtilt_deg;
    if (antenna == "directional") c.antenna = prop::AntennaSpec::directional();
    try {
      c.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    return c;
  }
};

SSMap pg_as_ss(const PGMap& pg) {
  SSMap ss(pg.area);
  ss.values = pg.values;
  ss.mask = pg.mask;
  return ss;
}

// Any grid kind except building reads as a dBm map.
SSMap load_db_map(const fs::path& path) {
  auto g = io::load_grid(path);
  if (g.kind == "ss") return io::as_ss_map(g);
  if (g.kind == "pg") return pg_as_ss(io::as_pg_map(g));
  throw InputError(path.string() + ": expected a pg or ss grid, found kind '" + g.kind + "'");
}

void render(const fs::path& grid_path, const fs::path& out) {
  const auto g = io::load_grid(grid_path);
  const bool heights = g.kind == "building";
  io::write_atomic(out, io::encode_pgm(g, heights ? 0.0 : kRenderLowDbm, heights ? kRenderHeightM : kRenderHighDbm));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radio path-gain and signal-strength maps from building data"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "worker threads (fallback: SIGMAP_THREADS, then all cores)")
      ->check(CLI::PositiveNumber);

  // rasterize
  auto* rasterize = app.add_subcommand("rasterize", "GeoJSON footprints -> building height grid");
  std::string geojson, out;
  double lat = 0.0, lon = 0.0, size_m = 512.0, resolution_m = 4.0, ratio_min = 0.0;
  rasterize->add_option("--geojson", geojson, "FeatureCollection of building polygons")->required();
  rasterize->add_option("--out", out, "output directory")->required();
  rasterize->add_option("--lat", lat, "latitude of the south-west corner")->required();
  rasterize->add_option("--lon", lon, "longitude of the south-west corner")->required();
  rasterize->add_option("--size-m", size_m, "side length in m")->capture_default_str();
  rasterize->add_option("--resolution-m", resolution_m, "pixel size in m")->capture_default_str();
  rasterize->add_option("--ratio-min", ratio_min, "reject areas with a smaller building-to-land ratio")
      ->capture_default_str();

  // uma / trace
  auto* uma = app.add_subcommand("uma", "UMa path-gain map");
  auto* trace = app.add_subcommand("trace", "ray-traced path-gain map");
  std::string building_path, uma_mode = "switched";
  CellOptions cell_opts;
  rt::RtConfig rt_cfg;
  bool no_reflection = false, no_diffraction = false;
  for (auto* sub : {uma, trace}) {
    sub->add_option("--building", building_path, "building grid")->required();
    sub->add_option("--out", out, "output directory")->required();
    cell_opts.attach(sub);
  }
  uma->add_option("--mode", uma_mode, "LOS/NLOS selection")
      ->check(CLI::IsMember({"switched", "los", "nlos"}))
      ->capture_default_str();
  trace->add_option("--n-rays", rt_cfg.n_rays, "ray budget")->capture_default_str();
  trace->add_option("--max-bounces", rt_cfg.max_bounces, "reflection depth")->capture_default_str();
  trace->add_flag("--no-reflection", no_reflection, "direct and diffracted paths only");
  trace->add_flag("--no-diffraction", no_diffraction, "skip knife-edge diffraction");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "procedural training dataset");
  synth::DatasetConfig ds_cfg;
  int grid_cells = 128;
  synth_cmd->add_option("--out", out, "dataset directory")->required();
  synth_cmd->add_option("--areas", ds_cfg.n_areas, "number of areas")->capture_default_str();
  synth_cmd->add_option("--seed", ds_cfg.seed, "seed")->capture_default_str();
  synth_cmd->add_option("--grid", grid_cells, "pixels per side")->capture_default_str();
  synth_cmd->add_option("--resolution-m", resolution_m, "pixel size in m")->capture_default_str();
  synth_cmd->add_option("--n-rays", ds_cfg.rt.n_rays, "ray budget")->capture_default_str();
  synth_cmd->add_option("--max-bounces", ds_cfg.rt.max_bounces, "reflection depth")->capture_default_str();
  synth_cmd->add_option("--freq-hz", ds_cfg.carrier_freq_hz, "carrier frequency")->capture_default_str();
  synth_cmd->add_option("--downtilt", ds_cfg.downtilt_deg, "directional downtilt in degrees")->capture_default_str();
  synth_cmd->add_option("--train-ratio", ds_cfg.train_ratio, "fraction of areas used for training")
      ->capture_default_str();

  // sample
  auto* sample = app.add_subcommand("sample", "draw sparse measurement points from a map");
  std::string truth_path;
  std::size_t sample_count = 100;
  std::uint64_t seed = 1;
  sample->add_option("--truth", truth_path, "pg or ss grid")->required();
  sample->add_option("--count", sample_count, "number of points")->capture_default_str();
  sample->add_option("--seed", seed, "seed")->capture_default_str();
  sample->add_option("--out", out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "two-stage U-Net training");
  std::string dataset_dir, init_ckpt, stage = "all";
  nn::TrainConfig tr_cfg;
  int base_channels = 8;
  bool no_augment = false;
  train->add_option("--dataset", dataset_dir, "directory holding manifest.json")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--base", base_channels, "first-level U-Net width")->capture_default_str();
  train->add_option("--epochs", tr_cfg.epochs, "epochs per stage")->capture_default_str();
  train->add_option("--batch-size", tr_cfg.batch_size, "minibatch size")->capture_default_str();
  train->add_option("--lr", tr_cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train->add_option("--seed", tr_cfg.seed, "seed")->capture_default_str();
  train->add_option("--sparse-min", tr_cfg.sparse_min, "fewest sparse points per sample")->capture_default_str();
  train->add_option("--sparse-max", tr_cfg.sparse_max, "most sparse points per sample")->capture_default_str();
  train->add_option("--val-sparse", tr_cfg.val_sparse, "sparse points in validation")->capture_default_str();
  train->add_flag("--no-augment", no_augment, "disable rotation/mirror augmentation");
  train->add_option("--stage", stage, "stages to run")
      ->check(CLI::IsMember({"all", "iso", "dir"}))
      ->capture_default_str();
  train->add_option("--init", init_ckpt, "start from this checkpoint (required for --stage dir)");

  // predict
  auto* predict = app.add_subcommand("predict", "signal-strength map from sparse measurements");
  std::string engine = "unet", model_path, uma_path, sparse_path;
  predict->add_option("--engine", engine, "unet: cascaded model; uma: offset-calibrated UMa; nn: nearest sample")
      ->check(CLI::IsMember({"unet", "uma", "nn"}))
      ->capture_default_str();
  predict->add_option("--model", model_path, "checkpoint (unet engine)");
  predict->add_option("--building", building_path, "building grid")->required();
  predict->add_option("--uma", uma_path, "UMa path-gain grid (unet and uma engines)");
  predict->add_option("--sparse", sparse_path, "sparse CSV with header ix,iy,value_dbm")->required();
  predict->add_option("--out", out, "output directory")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "error statistics of a predicted map");
  std::string pred_path, measurements_path, method, device = "-", pci_label = "-";
  std::optional<std::string> pci_filter;
  eval_cmd->add_option("--pred", pred_path, "predicted grid")->required();
  auto* truth_opt = eval_cmd->add_option("--truth", truth_path, "reference grid");
  auto* meas_opt = eval_cmd->add_option("--measurements", measurements_path, "measurement CSV to bin as reference");
  truth_opt->excludes(meas_opt);
  eval_cmd->add_option("--pci", pci_filter, "keep measurements of this cell only");
  eval_cmd->add_option("--method", method, "method label (default: prediction file stem)");
  eval_cmd->add_option("--device", device, "device label")->capture_default_str();
  eval_cmd->add_option("--out", out, "output directory")->required();

  // report
  auto* report = app.add_subcommand("report", "metrics table and PGM renderings");
  std::vector<std::string> preds, grids;
  report->add_option("--truth", truth_path, "reference grid")->required();
  report->add_option("--pred", preds, "NAME=GRID prediction to score and render");
  report->add_option("--grid", grids, "extra grid to render");
  report->add_option("--out", out, "output directory")->required();

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::Success& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return 2;
    }
    const int threads = resolve_threads(threads_flag);
    set_thread_count(threads);
    const CLI::App* sub = app.get_subcommands().front();
    log_resolved(*sub, threads);

    if (sub == rasterize) {
      geo::GeoArea area = geo::default_area(lat, lon);
      area.side_x = area.side_y = size_m;
      area.grid_x = area.grid_y = static_cast<int>(std::lround(size_m / resolution_m));
      try {
        area.validate();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      const auto parsed = geo::parse_footprints(io::read_text(geojson), area);
      const auto map = geo::rasterize(parsed.footprints, area);
      const double ratio = geo::building_ratio(map);
      log("footprints " + std::to_string(parsed.footprints.size()) + ", rejected " + std::to_string(parsed.rejected) +
          ", building ratio " + std::to_string(ratio));
      if (ratio < ratio_min)
        throw ConstraintError("building ratio " + std::to_string(ratio) + " is below --ratio-min " +
                              std::to_string(ratio_min));
      io::save_grid(prepare_out(out) / "building.grd", io::to_grid_file(map));
    } else if (sub == uma || sub == trace) {
      const auto map = io::load_building_map(building_path);
      const auto cell = cell_opts.resolve(map);
      const auto dir = prepare_out(out);
      if (sub == uma) {
        const auto mode = uma_mode == "los" ? prop::UmaMode::los_only
                          : uma_mode == "nlos" ? prop::UmaMode::nlos_only
                                               : prop::UmaMode::switched;
        io::save_grid(dir / "uma.grd", io::to_grid_file(prop::uma_pg_map(map, cell, mode)));
      } else {
        rt_cfg.rx_height_m = cell.rx_height_m;
        rt_cfg.enable_reflection = !no_reflection;
        rt_cfg.enable_diffraction = !no_diffraction;
        rt_cfg.validate();
        io::save_grid(dir / "pg.grd", io::to_grid_file(rt::trace_pg_map(geo::extrude_raster(map), map, cell, rt_cfg)));
      }
    } else if (sub == synth_cmd) {
      ds_cfg.area = geo::default_area();
      ds_cfg.area.grid_x = ds_cfg.area.grid_y = grid_cells;
      ds_cfg.area.side_x = ds_cfg.area.side_y = grid_cells * resolution_m;
      const auto m = synth::generate_dataset(ds_cfg, prepare_out(out));
      log("wrote " + std::to_string(m.entries.size()) + " areas (" + std::to_string(m.indices(synth::Split::train).size()) +
          " train, " + std::to_string(m.indices(synth::Split::val).size()) + " val)");
    } else if (sub == sample) {
      const auto truth = load_db_map(truth_path);
      const std::size_t n = std::min(sample_count, truth.unmasked_count());
      Rng rng(seed);
      io::save_sparse_csv(prepare_out(out) / "sparse.csv", synth::sample_sparse(truth, n, rng));
    } else if (sub == train) {
      tr_cfg.augment = !no_augment;
      tr_cfg.validate();
      const auto manifest = synth::load_manifest(fs::path(dataset_dir) / "manifest.json");
      auto model = init_ckpt.empty() ? nn::CascadedModel::create(base_channels, tr_cfg.seed) : nn::load_checkpoint(init_ckpt);
      const auto dir = prepare_out(out);
      json history = json::object();
      auto record = [&](const char* name) {
        return [&history, name](const nn::EpochRecord& r) {
          log(std::string(name) + " epoch " + std::to_string(r.epoch) + " train " + std::to_string(r.train_loss) +
              " val " + std::to_string(r.val_loss));
          history[name]["epochs"].push_back({{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
        };
      };
      auto finish = [&](const char* name, const nn::TrainHistory& h) {
        history[name]["best_epoch"] = h.best_epoch;
        history[name]["best_val_loss"] = h.best_val_loss;
      };
      if (stage != "dir") finish("iso", nn::train_stage1(model, manifest, tr_cfg, record("iso")));
      if (stage != "iso") finish("dir", nn::train_stage2(model, manifest, tr_cfg, record("dir")));
      nn::save_checkpoint(dir / "model.ckpt", model);
      write_json(dir / "history.json", history);
    } else if (sub == predict) {
      const auto map = io::load_building_map(building_path);
      const auto sparse = io::load_sparse_csv(sparse_path, map.area);
      const auto dir = prepare_out(out);
      auto need = [](const std::string& v, const char* flag) {
        if (v.empty()) throw InputError(std::string("--engine needs ") + flag);
      };
      SSMap result;
      if (engine == "unet") {
        need(model_path, "--model");
        need(uma_path, "--uma");
        auto model = nn::load_checkpoint(model_path);
        const auto uma_map = io::load_pg_map(uma_path);
        io::save_grid(dir / "pred_iso.grd", io::to_grid_file(nn::predict_iso(model, map, uma_map)));
        result = nn::predict_ss(model, map, uma_map, sparse);
      } else if (engine == "uma") {
        need(uma_path, "--uma");
        const auto base = pg_as_ss(io::load_pg_map(uma_path));
        const double offset = eval::calibrate_offset(base, sparse);
        log("calibrated offset " + std::to_string(offset) + " dB");
        result = eval::apply_offset(base, offset);
      } else {
        result = eval::nn_interpolate(sparse, building_mask(map));
      }
      io::save_grid(dir / ("pred_" + engine + ".grd"), io::to_grid_file(result));
    } else if (sub == eval_cmd) {
      const auto pred = load_db_map(pred_path);
      SSMap truth;
      const auto dir = prepare_out(out);
      if (!measurements_path.empty()) {
        const auto ingested = eval::ingest_csv(measurements_path);
        log("measurements " + std::to_string(ingested.records.size()) + ", rejected " + std::to_string(ingested.rejected));
        truth = eval::bin_measurements(ingested.records, pred.area, pci_filter);
        io::save_grid(dir / "measured.grd", io::to_grid_file(truth));
      } else if (!truth_path.empty()) {
        truth = load_db_map(truth_path);
      } else {
        throw InputError("eval needs --truth or --measurements");
      }
      if (pci_filter) pci_label = *pci_filter;
      if (method.empty()) method = fs::path(pred_path).stem().string();
      const auto stats = eval::error_stats(pred, truth);
      log(method + ": rmse " + std::to_string(stats.rmse) + " dB over " + std::to_string(stats.count) + " pixels");
      io::write_atomic(dir / "stats.json", eval::stats_json(stats) + "\n");
      io::write_atomic(dir / "stats.csv", eval::stats_csv_header() + eval::stats_csv_row(pci_label, device, method, stats));
    } else if (sub == report) {
      const auto truth = load_db_map(truth_path);
      const auto dir = prepare_out(out);
      render(truth_path, dir / "truth.pgm");
      std::string csv = eval::stats_csv_header();
      for (const auto& p : preds) {
        const auto eq = p.find('=');
        const std::string name = eq == std::string::npos ? fs::path(p).stem().string() : p.substr(0, eq);
        const std::string path = eq == std::string::npos ? p : p.substr(eq + 1);
        csv += eval::stats_csv_row("-", "-", name, eval::error_stats(load_db_map(path), truth));
        render(path, dir / (name + ".pgm"));
      }
      for (const auto& g : grids) render(g, dir / (fs::path(g).stem().string() + ".pgm"));
      io::write_atomic(dir / "metrics.csv", csv);
    }
    return 0;
  } catch (const ConstraintError& e) {
    log(std::string("error: ") + e.what());
    return 3;
  } catch (const InputError& e) {
    log(std::string("error: ") + e.what());
    return 2;
  } catch (const ConfigError& e) {
    log(std::string("error: ") + e.what());
    return 2;
  } catch (const CLI::Error& e) {
    log(std::string("error: ") + e.what());
    return 2;
  } catch (const std::exception& e) {
    log(std::string("internal error: ") + e.what());
    return 4;
  }
}
