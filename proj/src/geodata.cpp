#include "sigmap/geodata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sigmap/error.hpp"

namespace sigmap::geo {
namespace {

using nlohmann::json;

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::optional<double> numeric_property(const json& props, const char* key) {
  if (!props.is_object()) return std::nullopt;
  const auto it = props.find(key);
  if (it == props.end() || it->is_null()) return std::nullopt;
  if (it->is_number()) return it->get<double>();
  if (it->is_string()) {
    // OSM-derived data often carries "12.5" or "12 m".
    const auto& s = it->get_ref<const std::string&>();
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      return v;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

double cross(Vec2 o, Vec2 a, Vec2 b) { return sigmap::cross(a - o, b - o); }

bool segments_intersect(Vec2 p1, Vec2 p2, Vec2 q1, Vec2 q2) {
  const double d1 = cross(q1, q2, p1);
  const double d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1);
  const double d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) return true;
  auto on_segment = [](Vec2 a, Vec2 b, Vec2 p) {
    return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
           p.y <= std::max(a.y, b.y);
  };
  if (d1 == 0 && on_segment(q1, q2, p1)) return true;
  if (d2 == 0 && on_segment(q1, q2, p2)) return true;
  if (d3 == 0 && on_segment(p1, p2, q1)) return true;
  if (d4 == 0 && on_segment(p1, p2, q2)) return true;
  return false;
}

}  // namespace

void GeoArea::validate() const {
  if (!(side_x > 0 && side_y > 0 && grid_x > 0 && grid_y > 0))
    throw std::invalid_argument("area sides and grid sizes must be positive");
  const double rx = side_x / grid_x;
  const double ry = side_y / grid_y;
  if (std::abs(rx - ry) > 1e-9 * rx) throw std::invalid_argument("area pixels must be square");
}

GeoArea default_area(double origin_lat, double origin_lon) {
  GeoArea a;
  a.origin_lat = origin_lat;
  a.origin_lon = origin_lon;
  return a;
}

MaterialTable default_materials() {
  // Permittivity/conductivity per ITU-R P.2040 material classes evaluated
  // at 3.66 GHz, except concrete which keeps the tabulated 0.0462 S/m.
  return {
      {"concrete", {5.24, 0.0462}},
      {"brick", {3.91, 0.0293}},
      {"glass", {6.31, 0.0194}},
      {"wood", {1.99, 0.0189}},
  };
}

float BuildingMap::max_height() const {
  float m = 0.0f;
  for (float h : heights.values()) m = std::max(m, h);
  return m;
}

const Material& ExtrudedScene::material(const Wall& w) const {
  const auto it = materials.find(w.material_id);
  if (it == materials.end()) throw InputError("unknown material id '" + w.material_id + "'");
  return it->second;
}

Vec2 project_wgs84(double lat_deg, double lon_deg, const GeoArea& area) {
  const double dlat = (lat_deg - area.origin_lat) * kDegToRad;
  const double dlon = (lon_deg - area.origin_lon) * kDegToRad;
  return {kEarthRadiusM * std::cos(area.origin_lat * kDegToRad) * dlon, kEarthRadiusM * dlat};
}

std::pair<double, double> unproject_local(Vec2 p, const GeoArea& area) {
  const double lat = area.origin_lat + p.y / kEarthRadiusM / kDegToRad;
  const double lon = area.origin_lon + p.x / (kEarthRadiusM * std::cos(area.origin_lat * kDegToRad)) / kDegToRad;
  return {lat, lon};
}

bool point_in_polygon(Vec2 p, const std::vector<Vec2>& polygon) {
  // Crossing-number test with half-open edges; a point on a left/bottom
  // edge counts as inside, on a right/top edge as outside.
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Vec2 a = polygon[i];
    const Vec2 b = polygon[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool is_simple_polygon(const std::vector<Vec2>& polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a1 = polygon[i];
    const Vec2 a2 = polygon[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      // Adjacent edges share a vertex by construction.
      if (j == i + 1 || (i == 0 && j == n - 1)) continue;
      if (segments_intersect(a1, a2, polygon[j], polygon[(j + 1) % n])) return false;
    }
  }
  return true;
}

FootprintParseResult parse_footprints(std::string_view document, const GeoArea& area) {
  json doc;
  try {
    doc = json::parse(document.begin(), document.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed GeoJSON: ") + e.what(), e.byte);
  }
  if (!doc.is_object() || doc.value("type", "") != "FeatureCollection")
    throw InputError("GeoJSON root must be a FeatureCollection");

  FootprintParseResult result;
  const auto features = doc.find("features");
  if (features == doc.end()) return result;
  if (!features->is_array()) throw InputError("GeoJSON 'features' must be an array");

  for (const auto& feature : *features) {
    const auto geometry = feature.find("geometry");
    if (!feature.is_object() || geometry == feature.end() || !geometry->is_object() ||
        geometry->value("type", "") != "Polygon") {
      ++result.rejected;
      continue;
    }
    const auto rings = geometry->find("coordinates");
    if (rings == geometry->end() || !rings->is_array() || rings->empty() || !(*rings)[0].is_array()) {
      ++result.rejected;
      continue;
    }

    Footprint fp;
    bool ok = true;
    for (const auto& pos : (*rings)[0]) {
      if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number()) {
        ok = false;
        break;
      }
      fp.polygon.push_back(project_wgs84(pos[1].get<double>(), pos[0].get<double>(), area));
    }
    if (ok && fp.polygon.size() > 1 && fp.polygon.front() == fp.polygon.back()) fp.polygon.pop_back();
    if (!ok || fp.polygon.size() < 3 || !is_simple_polygon(fp.polygon)) {
      ++result.rejected;
      continue;
    }

    const json props = feature.value("properties", json::object());
    if (const auto h = numeric_property(props, "height_m"); h && *h > 0) {
      fp.height = *h;
    } else if (const auto levels = numeric_property(props, "levels"); levels && *levels > 0) {
      fp.height = *levels * kLevelHeightM;
    } else {
      fp.height = kDefaultBuildingHeightM;
    }
    if (props.is_object()) {
      if (const auto m = props.find("material"); m != props.end() && m->is_string())
        fp.material_id = m->get<std::string>();
    }
    result.footprints.push_back(std::move(fp));
  }
  return result;
}

BuildingMap rasterize(const std::vector<Footprint>& footprints, const GeoArea& area) {
  area.validate();
  BuildingMap map{FloatGrid(area.grid_x, area.grid_y, 0.0f), area};
  const double r = area.resolution();
  for (const auto& fp : footprints) {
    if (fp.polygon.size() < 3) continue;
    double x0 = fp.polygon[0].x, x1 = x0, y0 = fp.polygon[0].y, y1 = y0;
    for (const auto& p : fp.polygon) {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
    const int ix0 = std::max(0, static_cast<int>(std::floor(x0 / r - 0.5)));
    const int ix1 = std::min(area.grid_x - 1, static_cast<int>(std::ceil(x1 / r - 0.5)));
    const int iy0 = std::max(0, static_cast<int>(std::floor(y0 / r - 0.5)));
    const int iy1 = std::min(area.grid_y - 1, static_cast<int>(std::ceil(y1 / r - 0.5)));
    const auto h = static_cast<float>(fp.height);
    for (int iy = iy0; iy <= iy1; ++iy) {
      for (int ix = ix0; ix <= ix1; ++ix) {
        if (map.heights(ix, iy) >= h) continue;
        if (point_in_polygon(area.pixel_center(ix, iy), fp.polygon)) map.heights(ix, iy) = h;
      }
    }
  }
  return map;
}

double building_ratio(const BuildingMap& map) {
  if (map.heights.empty()) return 0.0;
  const auto built = std::count_if(map.heights.values().begin(), map.heights.values().end(),
                                   [](float h) { return h > 0.0f; });
  return static_cast<double>(built) / static_cast<double>(map.heights.size());
}

ExtrudedScene extrude(const std::vector<Footprint>& footprints, MaterialTable materials) {
  ExtrudedScene scene;
  scene.materials = std::move(materials);
  for (std::size_t i = 0; i < footprints.size(); ++i) {
    const auto& fp = footprints[i];
    if (!scene.materials.contains(fp.material_id))
      throw InputError("footprint " + std::to_string(i) + " uses unknown material '" + fp.material_id + "'");
    const std::size_t n = fp.polygon.size();
    for (std::size_t k = 0; k < n; ++k) {
      scene.walls.push_back({fp.polygon[k], fp.polygon[(k + 1) % n], fp.height, fp.material_id, static_cast<int>(i)});
    }
    scene.rooftops.push_back({fp.polygon, fp.height, static_cast<int>(i)});
  }
  return scene;
}

ExtrudedScene extrude_raster(const BuildingMap& map, const std::string& material_id) {
  ExtrudedScene scene;
  scene.materials = default_materials();
  if (!scene.materials.contains(material_id)) throw InputError("unknown material '" + material_id + "'");
  const auto& g = map.heights;
  const double r = map.area.resolution();
  auto h_at = [&](int ix, int iy) -> float { return g.contains(ix, iy) ? g(ix, iy) : 0.0f; };

  // Vertical edges (x = const) between columns ix-1 and ix, merged along y.
  for (int ix = 0; ix <= g.width(); ++ix) {
    int run_start = -1;
    float run_h = 0.0f;
    for (int iy = 0; iy <= g.height(); ++iy) {
      float h = 0.0f;
      if (iy < g.height()) {
        const float left = h_at(ix - 1, iy);
        const float right = h_at(ix, iy);
        h = left != right ? std::max(left, right) : 0.0f;
      }
      if (run_start >= 0 && h != run_h) {
        scene.walls.push_back({{ix * r, run_start * r}, {ix * r, iy * r}, run_h, material_id, -1});
        run_start = -1;
      }
      if (h > 0.0f && run_start < 0) {
        run_start = iy;
        run_h = h;
      }
    }
  }
  // Horizontal edges (y = const), merged along x.
  for (int iy = 0; iy <= g.height(); ++iy) {
    int run_start = -1;
    float run_h = 0.0f;
    for (int ix = 0; ix <= g.width(); ++ix) {
      float h = 0.0f;
      if (ix < g.width()) {
        const float below = h_at(ix, iy - 1);
        const float above = h_at(ix, iy);
        h = below != above ? std::max(below, above) : 0.0f;
      }
      if (run_start >= 0 && h != run_h) {
        scene.walls.push_back({{run_start * r, iy * r}, {ix * r, iy * r}, run_h, material_id, -1});
        run_start = -1;
      }
      if (h > 0.0f && run_start < 0) {
        run_start = ix;
        run_h = h;
      }
    }
  }
  for (int iy = 0; iy < g.height(); ++iy) {
    for (int ix = 0; ix < g.width(); ++ix) {
      if (g(ix, iy) <= 0.0f) continue;
      scene.rooftops.push_back(
          {{{ix * r, iy * r}, {(ix + 1) * r, iy * r}, {(ix + 1) * r, (iy + 1) * r}, {ix * r, (iy + 1) * r}},
           g(ix, iy),
           -1});
    }
  }
  return scene;
}

}  // namespace sigmap::geo
