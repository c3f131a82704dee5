#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "sigmap/geodata.hpp"
#include "sigmap/maps.hpp"
#include "sigmap/propagation.hpp"
#include "sigmap/vec.hpp"

namespace sigmap::rt {

/// Value written to outdoor pixels that no path reaches.
inline constexpr double kFloorDb = -200.0;

struct RtConfig {
  std::size_t n_rays = 100'000;  // budget; rounded to whole azimuth rings of the elevation fan
  int max_bounces = 8;
  bool enable_reflection = true;
  bool enable_diffraction = true;
  double rx_height_m = 2.0;
  double elevation_min_deg = -90.0;
  double elevation_max_deg = 10.0;
  double elevation_step_deg = 1.0;

  /// Throws ConfigError on zero rays, negative bounces or a bad fan.
  void validate() const;
  static RtConfig paper_scale() {
    RtConfig c;
    c.n_rays = 7'000'000;
    return c;
  }
};

enum class PathKind : std::uint8_t { direct, reflected, diffracted };

/// Antenna-independent description of one propagation path.
struct PathContribution {
  double power_gain = 0.0;  // linear, isotropic TX/RX antennas
  double path_length = 0.0;
  int bounce_count = 0;
  Vec3 departure;  // unit direction leaving the TX
  PathKind kind = PathKind::direct;
  std::vector<int> walls;  // reflecting wall indices, in order
};

Vec3 reflect(Vec3 direction, Vec3 wall_normal);

enum class Polarization { te, tm };

/// |Gamma| of a planar interface with complex permittivity
/// eps_r - j sigma / (2 pi f eps0); incidence measured from the normal.
double fresnel_reflection(const geo::Material& material, double f_hz, double incidence_rad, Polarization pol);

/// Mean of |Gamma_TE|^2 and |Gamma_TM|^2 (dual-polarized link).
double reflection_power(const geo::Material& material, double f_hz, double incidence_rad);

/// Single knife-edge diffraction loss J(v) in dB (ITU-R P.526 approximation).
double knife_edge_loss(double v);

/// Dominant-edge rooftop diffraction along the vertical plane through tx and
/// rx, using the building raster as the terrain profile. Empty when the
/// direct segment is clear (los_test).
std::optional<PathContribution> diffraction_contribution(const geo::BuildingMap& map, Vec3 tx, Vec3 rx, double f_hz);

/// Every path found for every pixel of a transmitter location. Building
/// pixels carry no paths.
struct PathSet {
  geo::GeoArea area;
  MaskGrid mask;
  Vec3 tx;
  double carrier_freq_hz = 0.0;
  std::vector<std::vector<PathContribution>> per_pixel;  // row-major like Grid

  const std::vector<PathContribution>& at(int ix, int iy) const {
    return per_pixel[static_cast<std::size_t>(iy) * area.grid_x + ix];
  }
  std::size_t path_count() const;
};

/// Shoots the ray fan from the cell's TX point and evaluates the discovered
/// reflection sequences exactly with image sources. Antenna patterns are
/// applied later by render_pg_map.
PathSet trace_paths(const geo::ExtrudedScene& scene, const geo::BuildingMap& map, const prop::CellConfig& cell,
                    const RtConfig& cfg);

/// Incoherent sum of all paths weighted by the cell's TX antenna gain.
/// Unreached outdoor pixels get kFloorDb.
PGMap render_pg_map(const PathSet& paths, const prop::CellConfig& cell);

PGMap trace_pg_map(const geo::ExtrudedScene& scene, const geo::BuildingMap& map, const prop::CellConfig& cell,
                   const RtConfig& cfg);

}  // namespace sigmap::rt
