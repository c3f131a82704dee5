#pragma once

#include <optional>

#include "sigmap/geodata.hpp"
#include "sigmap/maps.hpp"
#include "sigmap/vec.hpp"

namespace sigmap::prop {

inline constexpr double kSpeedOfLight = 299792458.0;  // m/s
inline constexpr double kDefaultCarrierHz = 3.66e9;

enum class AntennaKind { isotropic, directional };

struct AntennaSpec {
  AntennaKind kind = AntennaKind::isotropic;
  double boresight_gain_dbi = 6.3;
  double hpbw_az_deg = 65.0;
  double hpbw_el_deg = 8.0;
  double front_to_back_db = 30.0;

  static AntennaSpec isotropic() { return {}; }
  static AntennaSpec directional() { return {AntennaKind::directional}; }
};

struct CellConfig {
  double carrier_freq_hz = kDefaultCarrierHz;
  double tx_height_m = 25.0;
  double rx_height_m = 2.0;
  std::optional<Vec2> position;  // local meters; area center when unset
  double azimuth_deg = 0.0;      // clockwise from north
  double downtilt_deg = 0.0;     // below horizon
  AntennaSpec antenna;

  /// Throws std::invalid_argument on nonpositive frequency or heights out of order.
  void validate() const;
  Vec2 position_in(const geo::GeoArea& area) const { return position.value_or(area.center()); }
  Vec3 tx_point(const geo::GeoArea& area) const {
    const Vec2 p = position_in(area);
    return {p.x, p.y, tx_height_m};
  }
  double wavelength() const { return kSpeedOfLight / carrier_freq_hz; }
};

/// Free-space path gain, d in km, f in MHz.
double friis_pg(double d_km, double f_mhz);

/// 3GPP UMa breakpoint distance in meters.
double uma_breakpoint(double h_tx, double h_rx, double f_hz);

/// 3GPP UMa LOS path gain, d in meters, f in GHz. The branch is selected
/// strictly by d < d_BP.
double uma_los_pg(double d_m, double f_ghz, double h_tx, double h_rx);

/// min(LOS, NLOS') as in 3GPP UMa.
double uma_nlos_pg(double d_m, double f_ghz, double h_tx, double h_rx);

/// Ericsson (modified Okumura-Hata) urban path gain; d in km, f in MHz.
double ericsson_pg(double d_km, double f_mhz, double h_tx, double h_rx);

/// True when the straight segment clears every building pixel it crosses
/// (grid DDA; a pixel blocks iff its height >= the lowest segment height
/// inside that pixel).
bool los_test(const geo::BuildingMap& map, Vec3 tx, Vec3 rx);

/// Gain in dBi at the given offsets from boresight (degrees).
double antenna_gain(const AntennaSpec& spec, double az_off_deg, double el_off_deg);

/// Boresight offsets of a direction (any length) for a rigidly rotated
/// antenna: returns {azimuth offset, elevation offset} in degrees.
struct AngleOffsets {
  double az_deg;
  double el_deg;
};
AngleOffsets boresight_offsets(Vec3 direction, double azimuth_deg, double downtilt_deg);

/// Antenna gain of a cell toward `direction` (from the TX).
double cell_gain_dbi(const CellConfig& cell, Vec3 direction);

enum class UmaMode { switched, los_only, nlos_only };

/// UMa path-gain map. Building pixels are masked.
PGMap uma_pg_map(const geo::BuildingMap& map, const CellConfig& cell, UmaMode mode = UmaMode::switched);

/// Conventional synthetic-dataset TX height: 5 m above the tallest building.
double default_tx_height(const geo::BuildingMap& map);

}  // namespace sigmap::prop
