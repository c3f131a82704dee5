#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sigmap/geodata.hpp"
#include "sigmap/maps.hpp"
#include "sigmap/synth.hpp"

namespace sigmap::eval {

inline constexpr double kRsrpMinDbm = -160.0;
inline constexpr double kRsrpMaxDbm = -20.0;

struct MeasurementRecord {
  std::string timestamp;  // ISO-8601
  double lat = 0.0;
  double lon = 0.0;
  std::string pci;
  double rsrp_dbm = 0.0;
  std::string device;
};

struct IngestResult {
  std::vector<MeasurementRecord> records;
  std::size_t rejected = 0;
};

/// Header must name timestamp,lat,lon,pci,rsrp_dbm,device (any order).
/// A missing column is an InputError; malformed or out-of-range rows are
/// skipped and counted.
IngestResult parse_measurements(std::string_view text);
IngestResult ingest_csv(const std::filesystem::path& path);
std::string format_measurements(const std::vector<MeasurementRecord>& records);

/// Mean RSRP (dB domain) of the records falling in each pixel; empty
/// pixels are masked, records outside the area dropped. The result does
/// not depend on record order.
SSMap bin_measurements(const std::vector<MeasurementRecord>& records, const geo::GeoArea& area,
                       const std::optional<std::string>& pci = std::nullopt);

/// Mean of (observed - predicted) over the calibration points.
double calibrate_offset(const SSMap& pred, const synth::SparseSSMap& calib);
SSMap apply_offset(const SSMap& m, double offset_db);

/// Nearest-sample fill of every pixel left unmasked by `mask`; ties go to
/// the lowest sample index.
SSMap nn_interpolate(const synth::SparseSSMap& sparse, const MaskGrid& mask);

/// Over pixels unmasked in both maps. InputError on differing areas or
/// when no pixel is shared.
double rmse(const SSMap& pred, const SSMap& truth);

inline constexpr int kHistogramBins = 60;  // 1 dB bins over [-30, 30), outliers clamped

struct ErrorStats {
  std::size_t count = 0;
  double rmse = 0.0;
  double mean = 0.0;  // signed, pred - truth
  double median_abs = 0.0;
  double iqr = 0.0;   // of |error|
  std::array<std::size_t, kHistogramBins> histogram{};
};

/// Linear-interpolation quantile of sorted values.
double quantile(const std::vector<double>& sorted, double p);
int histogram_bin(double error_db);
ErrorStats error_stats(const SSMap& pred, const SSMap& truth);

std::string stats_json(const ErrorStats& s);
std::string stats_csv_header();
std::string stats_csv_row(std::string_view pci, std::string_view device, std::string_view method,
                          const ErrorStats& s);

}  // namespace sigmap::eval
