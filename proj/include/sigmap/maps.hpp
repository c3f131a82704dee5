#pragma once

#include <cmath>
#include <cstddef>
#include <string_view>

#include "sigmap/geodata.hpp"
#include "sigmap/grid.hpp"

namespace sigmap {

struct DbTag {
  static constexpr std::string_view kind = "pg";
  static constexpr std::string_view units = "dB";
};
struct DbmTag {
  static constexpr std::string_view kind = "ss";
  static constexpr std::string_view units = "dBm";
};

/// Radio-quantity raster with a mask of excluded pixels (buildings, or
/// pixels without data). Values under the mask are unspecified.
template <typename Tag>
struct MaskedMap {
  FloatGrid values;
  MaskGrid mask;
  geo::GeoArea area;

  MaskedMap() = default;
  explicit MaskedMap(const geo::GeoArea& a, float fill = 0.0f)
      : values(a.grid_x, a.grid_y, fill), mask(a.grid_x, a.grid_y, 0), area(a) {}

  int width() const { return values.width(); }
  int height() const { return values.height(); }
  bool masked(int ix, int iy) const { return mask(ix, iy) != 0; }

  std::size_t unmasked_count() const {
    std::size_t n = 0;
    for (auto m : mask.values()) n += (m == 0);
    return n;
  }
};

using PGMap = MaskedMap<DbTag>;   // path gain, dB
using SSMap = MaskedMap<DbmTag>;  // signal strength, dBm

/// Mask that is 1 exactly on building pixels.
inline MaskGrid building_mask(const geo::BuildingMap& map) {
  MaskGrid m(map.heights.width(), map.heights.height(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) m.storage()[i] = map.heights.storage()[i] > 0.0f ? 1 : 0;
  return m;
}

}  // namespace sigmap
