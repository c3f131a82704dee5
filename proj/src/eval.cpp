#include "sigmap/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <regex>

#include <nlohmann/json.hpp>

#include "sigmap/error.hpp"
#include "sigmap/grid_io.hpp"

namespace sigmap::eval {
namespace {

constexpr std::array<std::string_view, 6> kColumns{"timestamp", "lat", "lon", "pci", "rsrp_dbm", "device"};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
  }
  return out;
}

std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool iso8601(std::string_view s) {
  static const std::regex re(R"(\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?)?)");
  return std::regex_match(s.begin(), s.end(), re);
}

void require_common(const SSMap& a, const SSMap& b) {
  if (!(a.area == b.area)) throw InputError("maps cover different areas");
}

std::vector<double> errors(const SSMap& pred, const SSMap& truth) {
  require_common(pred, truth);
  std::vector<double> e;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (pred.mask.storage()[i] || truth.mask.storage()[i]) continue;
    e.push_back(static_cast<double>(pred.values.storage()[i]) - truth.values.storage()[i]);
  }
  if (e.empty()) throw InputError("maps share no unmasked pixel");
  return e;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

IngestResult parse_measurements(std::string_view text) {
  IngestResult out;
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    return true;
  };
  std::string_view line;
  if (!next_line(line)) throw InputError("measurement CSV is empty (no header)");
  if (line.substr(0, 3) == "\xEF\xBB\xBF") line.remove_prefix(3);
  const auto header = split_fields(line);
  std::array<std::size_t, kColumns.size()> col{};
  for (std::size_t c = 0; c < kColumns.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), kColumns[c]);
    if (it == header.end()) throw InputError("measurement CSV lacks column '" + std::string(kColumns[c]) + "'");
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  while (next_line(line)) {
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto f = split_fields(line);
    if (f.size() != header.size()) {
      ++out.rejected;
      continue;
    }
    MeasurementRecord r;
    r.timestamp = f[col[0]];
    const auto lat = to_double(f[col[1]]), lon = to_double(f[col[2]]), rsrp = to_double(f[col[4]]);
    r.pci = f[col[3]];
    r.device = f[col[5]];
    if (!iso8601(r.timestamp) || !lat || !lon || !rsrp || std::abs(*lat) > 90.0 || std::abs(*lon) > 180.0 ||
        *rsrp < kRsrpMinDbm || *rsrp > kRsrpMaxDbm || r.pci.empty()) {
      ++out.rejected;
      continue;
    }
    r.lat = *lat;
    r.lon = *lon;
    r.rsrp_dbm = *rsrp;
    out.records.push_back(std::move(r));
  }
  return out;
}

IngestResult ingest_csv(const std::filesystem::path& path) {
  try {
    return parse_measurements(io::read_text(path));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string format_measurements(const std::vector<MeasurementRecord>& records) {
  std::string out = "timestamp,lat,lon,pci,rsrp_dbm,device\n";
  char buf[96];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,", r.lat, r.lon);
    out += r.timestamp + buf + r.pci;
    std::snprintf(buf, sizeof buf, ",%.17g,", r.rsrp_dbm);
    out += buf + r.device + "\n";
  }
  return out;
}

SSMap bin_measurements(const std::vector<MeasurementRecord>& records, const geo::GeoArea& area,
                       const std::optional<std::string>& pci) {
  area.validate();
  const double res = area.resolution();
  std::vector<std::vector<double>> cells(static_cast<std::size_t>(area.grid_x) * area.grid_y);
  for (const auto& r : records) {
    if (pci && r.pci != *pci) continue;
    const Vec2 p = geo::project_wgs84(r.lat, r.lon, area);
    const double fx = std::floor(p.x / res), fy = std::floor(p.y / res);
    if (!(fx >= 0 && fy >= 0 && fx < area.grid_x && fy < area.grid_y)) continue;
    cells[static_cast<std::size_t>(fy) * area.grid_x + static_cast<std::size_t>(fx)].push_back(r.rsrp_dbm);
  }
  SSMap out(area);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    auto& c = cells[i];
    if (c.empty()) {
      out.mask.storage()[i] = 1;
      continue;
    }
    std::sort(c.begin(), c.end());  // fixed summation order
    double sum = 0.0;
    for (double v : c) sum += v;
    out.values.storage()[i] = static_cast<float>(sum / static_cast<double>(c.size()));
  }
  return out;
}

double calibrate_offset(const SSMap& pred, const synth::SparseSSMap& calib) {
  if (calib.samples.empty()) throw InputError("calibration set is empty");
  if (!(calib.area == pred.area)) throw InputError("calibration points and prediction cover different areas");
  double sum = 0.0;
  for (const auto& s : calib.samples) {
    if (pred.mask(s.ix, s.iy)) throw InputError("calibration point falls on a masked prediction pixel");
    sum += s.value_dbm - static_cast<double>(pred.values(s.ix, s.iy));
  }
  return sum / static_cast<double>(calib.samples.size());
}

SSMap apply_offset(const SSMap& m, double offset_db) {
  SSMap out = m;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (!out.mask.storage()[i]) out.values.storage()[i] = static_cast<float>(out.values.storage()[i] + offset_db);
  return out;
}

SSMap nn_interpolate(const synth::SparseSSMap& sparse, const MaskGrid& mask) {
  if (sparse.samples.empty()) throw InputError("interpolation needs at least one sample");
  if (mask.width() != sparse.area.grid_x || mask.height() != sparse.area.grid_y)
    throw InputError("mask does not match the sample area");
  SSMap out(sparse.area);
  out.mask = mask;
  for (int iy = 0; iy < mask.height(); ++iy) {
    for (int ix = 0; ix < mask.width(); ++ix) {
      if (mask(ix, iy)) continue;
      std::int64_t best = std::numeric_limits<std::int64_t>::max();
      double value = 0.0;
      for (const auto& s : sparse.samples) {
        const std::int64_t dx = s.ix - ix, dy = s.iy - iy;
        const std::int64_t d2 = dx * dx + dy * dy;
        if (d2 < best) {
          best = d2;
          value = s.value_dbm;
        }
      }
      out.values(ix, iy) = static_cast<float>(value);
    }
  }
  return out;
}

double rmse(const SSMap& pred, const SSMap& truth) {
  double sum = 0.0;
  const auto e = errors(pred, truth);
  for (double v : e) sum += v * v;
  return std::sqrt(sum / static_cast<double>(e.size()));
}

double quantile(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw InputError("quantile of an empty set");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

int histogram_bin(double error_db) {
  const double b = std::floor(error_db + kHistogramBins / 2.0);
  return static_cast<int>(std::clamp(b, 0.0, static_cast<double>(kHistogramBins - 1)));
}

ErrorStats error_stats(const SSMap& pred, const SSMap& truth) {
  const auto e = errors(pred, truth);
  ErrorStats s;
  s.count = e.size();
  double sq = 0.0, sum = 0.0;
  std::vector<double> abs_e;
  abs_e.reserve(e.size());
  for (double v : e) {
    sq += v * v;
    sum += v;
    abs_e.push_back(std::abs(v));
    ++s.histogram[static_cast<std::size_t>(histogram_bin(v))];
  }
  s.rmse = std::sqrt(sq / static_cast<double>(e.size()));
  s.mean = sum / static_cast<double>(e.size());
  std::sort(abs_e.begin(), abs_e.end());
  s.median_abs = quantile(abs_e, 0.5);
  s.iqr = quantile(abs_e, 0.75) - quantile(abs_e, 0.25);
  return s;
}

std::string stats_json(const ErrorStats& s) {
  const nlohmann::json j = {{"count", s.count},   {"rmse_db", s.rmse}, {"mean_error_db", s.mean},
                            {"median_abs_db", s.median_abs}, {"iqr_db", s.iqr},
                            {"histogram", {{"low_db", -kHistogramBins / 2}, {"bin_db", 1}, {"counts", s.histogram}}}};
  return j.dump(2);
}

std::string stats_csv_header() { return "pci,device,method,count,rmse_db,median_abs_db,iqr_db,mean_error_db\n"; }

std::string stats_csv_row(std::string_view pci, std::string_view device, std::string_view method,
                          const ErrorStats& s) {
  std::string row;
  row.append(pci).append(",").append(device).append(",").append(method).append(",");
  row += std::to_string(s.count) + "," + fmt(s.rmse) + "," + fmt(s.median_abs) + "," + fmt(s.iqr) + "," + fmt(s.mean) + "\n";
  return row;
}

}  // namespace sigmap::eval
