#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sigmap/grid.hpp"
#include "sigmap/vec.hpp"

namespace sigmap::geo {

using sigmap::Vec2;

/// Square-pixel tile anchored at its south-west corner (origin_lat, origin_lon).
/// Local frame: x east, y north, meters.
struct GeoArea {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double side_x = 512.0;
  double side_y = 512.0;
  int grid_x = 128;
  int grid_y = 128;

  double resolution() const { return side_x / grid_x; }
  /// Throws std::invalid_argument unless both axes share a positive resolution.
  void validate() const;
  Vec2 pixel_center(int ix, int iy) const {
    const double r = resolution();
    return {(ix + 0.5) * r, (iy + 0.5) * r};
  }
  Vec2 center() const { return {side_x / 2, side_y / 2}; }
  bool operator==(const GeoArea&) const = default;
};

/// Standard tile: 512 m square at 4 m resolution.
GeoArea default_area(double origin_lat = 0.0, double origin_lon = 0.0);

struct Footprint {
  std::vector<Vec2> polygon;  // open ring, local meters
  double height = 0.0;        // meters, > 0
  std::string material_id = "concrete";
};

struct Material {
  double relative_permittivity = 5.24;
  double conductivity = 0.0462;  // S/m
};

using MaterialTable = std::map<std::string, Material, std::less<>>;

/// concrete (the default), brick, glass, wood at 3.66 GHz.
MaterialTable default_materials();

struct BuildingMap {
  FloatGrid heights;  // meters, 0 = open ground
  GeoArea area;

  bool is_building(int ix, int iy) const { return heights(ix, iy) > 0.0f; }
  float max_height() const;
};

/// Vertical rectangular facet standing on the ground.
struct Wall {
  Vec2 a;
  Vec2 b;
  double height = 0.0;
  std::string material_id;
  int footprint = -1;
};

struct Rooftop {
  std::vector<Vec2> polygon;
  double height = 0.0;
  int footprint = -1;
};

struct ExtrudedScene {
  std::vector<Wall> walls;
  std::vector<Rooftop> rooftops;
  MaterialTable materials;

  const Material& material(const Wall& w) const;
};

struct FootprintParseResult {
  std::vector<Footprint> footprints;
  int rejected = 0;  // features skipped (wrong geometry, < 3 vertices, self-intersecting)
};

/// Reads a GeoJSON FeatureCollection of Polygon features. Height comes from
/// `height_m`, else `levels` x 3 m, else 8 m; `material` selects the
/// material id. Only the outer ring is used. Throws ParseError on malformed
/// JSON and InputError when the document is not a FeatureCollection.
FootprintParseResult parse_footprints(std::string_view document, const GeoArea& area);

/// Local tangent-plane equirectangular projection about the area origin.
Vec2 project_wgs84(double lat_deg, double lon_deg, const GeoArea& area);

/// Inverse of project_wgs84.
std::pair<double, double> unproject_local(Vec2 p, const GeoArea& area);

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kLevelHeightM = 3.0;
inline constexpr double kDefaultBuildingHeightM = 8.0;

bool point_in_polygon(Vec2 p, const std::vector<Vec2>& polygon);
bool is_simple_polygon(const std::vector<Vec2>& polygon);

/// Pixel = max height over footprints containing the pixel center, else 0.
BuildingMap rasterize(const std::vector<Footprint>& footprints, const GeoArea& area);

/// Fraction of pixels with height > 0.
double building_ratio(const BuildingMap& map);

/// One wall per polygon edge plus one rooftop per footprint. Throws
/// InputError when a material id is not in `materials`.
ExtrudedScene extrude(const std::vector<Footprint>& footprints,
                      MaterialTable materials = default_materials());

/// Scene from a raster alone: each maximal run of pixel edges separating
/// different heights becomes a wall as tall as the taller side, and each
/// building pixel gets a 1-pixel rooftop.
ExtrudedScene extrude_raster(const BuildingMap& map, const std::string& material_id = "concrete");

}  // namespace sigmap::geo
