#include "sigmap/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sigmap/parallel.hpp"
#include "sigmap/pixel_walk.hpp"

namespace sigmap::prop {
namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void require_positive(double v, const char* what) {
  if (!(v > 0.0)) throw std::domain_error(std::string(what) + " must be positive");
}

double wrap_degrees(double a) {
  a = std::fmod(a, 360.0);
  if (a <= -180.0) a += 360.0;
  if (a > 180.0) a -= 360.0;
  return a;
}

}  // namespace

void CellConfig::validate() const {
  if (!(carrier_freq_hz > 0.0)) throw std::invalid_argument("carrier frequency must be positive");
  if (!(rx_height_m > 0.0 && tx_height_m > rx_height_m))
    throw std::invalid_argument("cell heights must satisfy tx_height > rx_height > 0");
}

double friis_pg(double d_km, double f_mhz) {
  require_positive(d_km, "distance");
  require_positive(f_mhz, "frequency");
  return -(32.45 + 20.0 * std::log10(d_km) + 20.0 * std::log10(f_mhz));
}

double uma_breakpoint(double h_tx, double h_rx, double f_hz) {
  if (!(h_tx > 1.0 && h_rx > 1.0)) throw std::domain_error("UMa breakpoint needs antenna heights above 1 m");
  require_positive(f_hz, "frequency");
  return 4.0 * (h_tx - 1.0) * (h_rx - 1.0) * f_hz / kSpeedOfLight;
}

double uma_los_pg(double d_m, double f_ghz, double h_tx, double h_rx) {
  require_positive(d_m, "distance");
  require_positive(f_ghz, "frequency");
  const double d_bp = uma_breakpoint(h_tx, h_rx, f_ghz * 1e9);
  if (d_m < d_bp) return -(28.0 + 22.0 * std::log10(d_m) + 20.0 * std::log10(f_ghz));
  const double dh = h_tx - h_rx;
  return -(28.0 + 40.0 * std::log10(d_m) + 20.0 * std::log10(f_ghz) - 9.0 * std::log10(d_bp * d_bp + dh * dh));
}

double uma_nlos_pg(double d_m, double f_ghz, double h_tx, double h_rx) {
  const double los = uma_los_pg(d_m, f_ghz, h_tx, h_rx);
  const double nlos = -(13.45 + 39.08 * std::log10(d_m) + 20.0 * std::log10(f_ghz) - 0.6 * (h_rx - 1.5));
  return std::min(los, nlos);
}

double ericsson_pg(double d_km, double f_mhz, double h_tx, double h_rx) {
  require_positive(d_km, "distance");
  require_positive(f_mhz, "frequency");
  require_positive(h_tx, "tx height");
  require_positive(h_rx, "rx height");
  constexpr double a0 = 36.2, a1 = 30.2, a2 = 12.0, a3 = 0.1;
  const double lf = std::log10(f_mhz);
  const double g = 44.49 * lf - 4.78 * lf * lf;
  const double ld = std::log10(d_km);
  const double lh = std::log10(h_tx);
  const double lrx = std::log10(11.75 * h_rx);
  return -(a0 + a1 * ld + a2 * lh + a3 * lh * ld - 3.2 * lrx * lrx + g);
}

bool los_test(const geo::BuildingMap& map, Vec3 tx, Vec3 rx) {
  const auto& g = map.heights;
  const double r = map.area.resolution();
  bool clear = true;
  walk_pixels(tx.xy(), rx.xy(), r, g.width(), g.height(), [&](int ix, int iy, double t0, double t1) {
    const float h = g(ix, iy);
    if (h <= 0.0f) return true;
    const double z = std::min(tx.z + (rx.z - tx.z) * t0, tx.z + (rx.z - tx.z) * t1);
    if (h >= z) {
      clear = false;
      return false;
    }
    return true;
  });
  return clear;
}

double antenna_gain(const AntennaSpec& spec, double az_off_deg, double el_off_deg) {
  if (spec.kind == AntennaKind::isotropic) return 0.0;
  const double az = az_off_deg / spec.hpbw_az_deg;
  const double el = el_off_deg / spec.hpbw_el_deg;
  const double attenuation = 12.0 * az * az + 12.0 * el * el;
  return spec.boresight_gain_dbi - std::min(attenuation, spec.front_to_back_db);
}

AngleOffsets boresight_offsets(Vec3 direction, double azimuth_deg, double downtilt_deg) {
  const double az = azimuth_deg * kDeg;
  const double tilt = downtilt_deg * kDeg;
  // Antenna frame: forward along the tilted boresight, right in the
  // horizontal plane, up completing the right-handed set.
  const Vec3 forward{std::sin(az) * std::cos(tilt), std::cos(az) * std::cos(tilt), -std::sin(tilt)};
  const Vec3 right{std::cos(az), -std::sin(az), 0.0};
  const Vec3 up = cross(right, forward);
  const Vec3 d = normalized(direction);
  const double f = dot(d, forward);
  const double s = dot(d, right);
  const double u = std::clamp(dot(d, up), -1.0, 1.0);
  return {wrap_degrees(std::atan2(s, f) / kDeg), std::asin(u) / kDeg};
}

double cell_gain_dbi(const CellConfig& cell, Vec3 direction) {
  if (cell.antenna.kind == AntennaKind::isotropic) return 0.0;
  const auto off = boresight_offsets(direction, cell.azimuth_deg, cell.downtilt_deg);
  return antenna_gain(cell.antenna, off.az_deg, off.el_deg);
}

PGMap uma_pg_map(const geo::BuildingMap& map, const CellConfig& cell, UmaMode mode) {
  cell.validate();
  const auto& area = map.area;
  PGMap out(area);
  out.mask = building_mask(map);
  const Vec3 tx = cell.tx_point(area);
  const double f_ghz = cell.carrier_freq_hz * 1e-9;
  const int nx = area.grid_x;
  const int ny = area.grid_y;
  parallel_chunks(static_cast<std::size_t>(ny), static_cast<std::size_t>(ny), [&](std::size_t, std::size_t b, std::size_t e) {
    for (auto iy = static_cast<int>(b); iy < static_cast<int>(e); ++iy) {
      for (int ix = 0; ix < nx; ++ix) {
        if (out.mask(ix, iy)) {
          out.values(ix, iy) = 0.0f;
          continue;
        }
        const Vec2 c = area.pixel_center(ix, iy);
        const Vec3 rx{c.x, c.y, cell.rx_height_m};
        const double d = norm(rx - tx);
        bool los = mode == UmaMode::los_only;
        if (mode == UmaMode::switched) los = los_test(map, tx, rx);
        const double pg = los ? uma_los_pg(d, f_ghz, cell.tx_height_m, cell.rx_height_m)
                              : uma_nlos_pg(d, f_ghz, cell.tx_height_m, cell.rx_height_m);
        out.values(ix, iy) = static_cast<float>(pg);
      }
    }
  });
  return out;
}

double default_tx_height(const geo::BuildingMap& map) { return static_cast<double>(map.max_height()) + 5.0; }

}  // namespace sigmap::prop
