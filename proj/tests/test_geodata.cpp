#include <doctest.h>

#include <nlohmann/json.hpp>

#include "sigmap/error.hpp"
#include "sigmap/geodata.hpp"
#include "sigmap/random.hpp"

using namespace sigmap;
using namespace sigmap::geo;

namespace {

GeoArea small_area(int n = 16, double r = 4.0) {
  GeoArea a;
  a.origin_lat = 36.0;
  a.origin_lon = -78.9;
  a.side_x = a.side_y = n * r;
  a.grid_x = a.grid_y = n;
  return a;
}

Footprint rect(double x0, double y0, double x1, double y1, double h) {
  return {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, h, "concrete"};
}

std::string feature_collection(const GeoArea& area, const std::vector<std::vector<Vec2>>& rings,
                               const std::vector<nlohmann::json>& props) {
  nlohmann::json fc = {{"type", "FeatureCollection"}, {"features", nlohmann::json::array()}};
  for (std::size_t i = 0; i < rings.size(); ++i) {
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : rings[i]) {
      const auto [lat, lon] = unproject_local(p, area);
      ring.push_back({lon, lat});
    }
    ring.push_back(ring.front());
    fc["features"].push_back({{"type", "Feature"},
                              {"properties", props[i]},
                              {"geometry", {{"type", "Polygon"}, {"coordinates", {ring}}}}});
  }
  return fc.dump();
}

}  // namespace

TEST_CASE("GeoArea default tile is 512 m at 4 m") {
  const auto a = default_area();
  CHECK(a.side_x == 512.0);
  CHECK(a.grid_x == 128);
  CHECK(a.resolution() == 4.0);
  GeoArea bad = a;
  bad.grid_y = 64;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("project_wgs84") {
  GeoArea a;
  a.origin_lat = 0.0;
  a.origin_lon = 10.0;
  const auto o = project_wgs84(0.0, 10.0, a);
  CHECK(o.x == 0.0);
  CHECK(o.y == 0.0);
  CHECK(project_wgs84(0.001, 10.0, a).y == doctest::Approx(111.1950802335).epsilon(1e-10));

  a.origin_lat = 60.0;
  CHECK(project_wgs84(60.0, 10.001, a).x == doctest::Approx(55.5975401168).epsilon(1e-10));

  const auto [lat, lon] = unproject_local({123.0, -45.0}, a);
  const auto back = project_wgs84(lat, lon, a);
  CHECK(back.x == doctest::Approx(123.0).epsilon(1e-9));
  CHECK(back.y == doctest::Approx(-45.0).epsilon(1e-9));
}

TEST_CASE("parse_footprints") {
  const auto area = small_area();
  SUBCASE("empty collection") {
    const auto r = parse_footprints(R"({"type":"FeatureCollection","features":[]})", area);
    CHECK(r.footprints.empty());
    CHECK(r.rejected == 0);
  }
  SUBCASE("explicit height") {
    const auto doc = feature_collection(area, {{{4, 4}, {12, 4}, {12, 12}, {4, 12}}}, {{{"height_m", 10}}});
    const auto r = parse_footprints(doc, area);
    REQUIRE(r.footprints.size() == 1);
    CHECK(r.footprints[0].height == 10.0);
    CHECK(r.footprints[0].polygon.size() == 4);
    CHECK(r.footprints[0].polygon[1].x == doctest::Approx(12.0).epsilon(1e-9));
    CHECK(r.footprints[0].material_id == "concrete");
  }
  SUBCASE("levels fallback and default height") {
    const auto doc = feature_collection(area, {{{4, 4}, {12, 4}, {12, 12}}, {{20, 20}, {30, 20}, {30, 30}}},
                                        {{{"levels", 4}}, nlohmann::json::object()});
    const auto r = parse_footprints(doc, area);
    REQUIRE(r.footprints.size() == 2);
    CHECK(r.footprints[0].height == 12.0);
    CHECK(r.footprints[1].height == kDefaultBuildingHeightM);
  }
  SUBCASE("numeric strings and material") {
    const auto doc =
        feature_collection(area, {{{4, 4}, {12, 4}, {12, 12}}}, {{{"height_m", "14.5"}, {"material", "brick"}}});
    const auto r = parse_footprints(doc, area);
    REQUIRE(r.footprints.size() == 1);
    CHECK(r.footprints[0].height == 14.5);
    CHECK(r.footprints[0].material_id == "brick");
  }
  SUBCASE("degenerate and self-intersecting polygons are rejected") {
    const auto doc = feature_collection(
        area, {{{4, 4}, {12, 4}}, {{0, 0}, {10, 10}, {10, 0}, {0, 10}}, {{4, 4}, {12, 4}, {12, 12}}},
        {nlohmann::json::object(), nlohmann::json::object(), nlohmann::json::object()});
    const auto r = parse_footprints(doc, area);
    CHECK(r.footprints.size() == 1);
    CHECK(r.rejected == 2);
  }
  SUBCASE("non-polygon geometry is counted, not fatal") {
    const auto r = parse_footprints(
        R"({"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}}]})",
        area);
    CHECK(r.footprints.empty());
    CHECK(r.rejected == 1);
  }
  SUBCASE("malformed JSON reports the byte offset") {
    try {
      parse_footprints(R"({"type":"FeatureCollection","features":[)", area);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.byte_offset() > 30);
    }
  }
  SUBCASE("wrong root type") {
    CHECK_THROWS_AS(parse_footprints(R"({"type":"Feature"})", area), InputError);
  }
}

TEST_CASE("rasterize") {
  const auto area = small_area();
  SUBCASE("no footprints") {
    const auto m = rasterize({}, area);
    CHECK(building_ratio(m) == 0.0);
    CHECK(m.heights.width() == 16);
  }
  SUBCASE("8 m square over a 2x2 block") {
    const auto m = rasterize({rect(4, 4, 12, 12, 10)}, area);
    int lit = 0;
    for (int iy = 0; iy < 16; ++iy)
      for (int ix = 0; ix < 16; ++ix) {
        const bool inside = (ix == 1 || ix == 2) && (iy == 1 || iy == 2);
        CHECK(m.heights(ix, iy) == (inside ? 10.0f : 0.0f));
        lit += m.heights(ix, iy) > 0;
      }
    CHECK(lit == 4);
  }
  SUBCASE("overlap takes the max") {
    const auto m = rasterize({rect(0, 0, 16, 16, 5), rect(8, 8, 24, 24, 12)}, area);
    CHECK(m.heights(0, 0) == 5.0f);
    CHECK(m.heights(2, 2) == 12.0f);
    CHECK(m.heights(5, 5) == 12.0f);
  }
  SUBCASE("clipping outside bounds") {
    const auto m = rasterize({rect(-100, -100, 6, 6, 7), rect(1000, 1000, 1100, 1100, 9)}, area);
    CHECK(m.heights(0, 0) == 7.0f);
    CHECK(m.heights(1, 1) == 0.0f);
  }
}

TEST_CASE("rasterize properties") {
  const auto area = small_area(24);
  Rng rng(7);
  auto random_rect = [&] {
    const double x = uniform(rng, -10, 90), y = uniform(rng, -10, 90);
    return rect(x, y, x + uniform(rng, 3, 30), y + uniform(rng, 3, 30), uniform(rng, 1, 40));
  };
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<Footprint> fps;
    for (int i = 0; i < 4; ++i) fps.push_back(random_rect());
    const auto base = rasterize(fps, area);

    // Monotone in the footprint set.
    auto more = fps;
    more.push_back(random_rect());
    const auto grown = rasterize(more, area);
    for (std::size_t i = 0; i < base.heights.size(); ++i)
      CHECK(grown.heights.storage()[i] >= base.heights.storage()[i]);

    // Translation by whole pixels commutes with rasterization on the interior.
    const int k = 3;
    auto shifted = fps;
    for (auto& f : shifted)
      for (auto& p : f.polygon) p.x += k * area.resolution();
    const auto moved = rasterize(shifted, area);
    for (int iy = 0; iy < area.grid_y; ++iy)
      for (int ix = k; ix < area.grid_x; ++ix) CHECK(moved.heights(ix, iy) == base.heights(ix - k, iy));

    const double ratio = building_ratio(base);
    CHECK(ratio >= 0.0);
    CHECK(ratio <= 1.0);
    const bool all_zero = std::all_of(base.heights.values().begin(), base.heights.values().end(),
                                      [](float h) { return h == 0.0f; });
    CHECK((ratio == 0.0) == all_zero);
  }
}

TEST_CASE("building_ratio") {
  BuildingMap m{FloatGrid(128, 128, 0.0f), default_area()};
  CHECK(building_ratio(m) == 0.0);
  for (int i = 0; i < 3277; ++i) m.heights.storage()[static_cast<std::size_t>(i)] = 5.0f;
  CHECK(building_ratio(m) == doctest::Approx(0.20001220703125));
  CHECK(building_ratio(m) >= 0.2);
  BuildingMap half{FloatGrid(4, 4, 0.0f), small_area(4)};
  for (int ix = 0; ix < 4; ++ix)
    for (int iy = 0; iy < 2; ++iy) half.heights(ix, iy) = 1.0f;
  CHECK(building_ratio(half) == 0.5);
}

TEST_CASE("extrude") {
  SUBCASE("triangle") {
    const auto s = extrude({{{{0, 0}, {10, 0}, {0, 10}}, 6.0, "concrete"}});
    CHECK(s.walls.size() == 3);
    CHECK(s.rooftops.size() == 1);
  }
  SUBCASE("square walls carry the footprint height and material") {
    const auto s = extrude({rect(0, 0, 10, 10, 10)});
    REQUIRE(s.walls.size() == 4);
    for (const auto& w : s.walls) {
      CHECK(w.height == 10.0);
      CHECK(s.material(w).relative_permittivity == 5.24);
      CHECK(s.material(w).conductivity == 0.0462);
    }
  }
  SUBCASE("additive") {
    const auto s = extrude({rect(0, 0, 10, 10, 10), rect(20, 20, 30, 30, 4)});
    CHECK(s.walls.size() == 8);
    CHECK(s.rooftops.size() == 2);
  }
  SUBCASE("wall count equals the sum of edge counts") {
    std::vector<Footprint> fps{{{{0, 0}, {10, 0}, {12, 5}, {5, 9}, {0, 6}}, 3.0, "glass"}, rect(0, 0, 1, 1, 1)};
    CHECK(extrude(fps).walls.size() == 9);
  }
  SUBCASE("unknown material") {
    CHECK_THROWS_AS(extrude({{{{0, 0}, {1, 0}, {0, 1}}, 1.0, "unobtainium"}}), InputError);
  }
}

TEST_CASE("extrude_raster outlines every height step") {
  const auto area = small_area(8);
  const auto map = rasterize({rect(4, 4, 12, 12, 10)}, area);
  const auto s = extrude_raster(map);
  CHECK(s.walls.size() == 4);
  CHECK(s.rooftops.size() == 4);
  double perimeter = 0.0;
  for (const auto& w : s.walls) {
    CHECK(w.height == 10.0);
    perimeter += norm(w.b - w.a);
  }
  CHECK(perimeter == doctest::Approx(32.0));
}
