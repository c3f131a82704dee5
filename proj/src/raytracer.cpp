#include "sigmap/raytracer.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <unordered_map>

#include "sigmap/error.hpp"
#include "sigmap/parallel.hpp"
#include "sigmap/pixel_walk.hpp"
#include "sigmap/random.hpp"

namespace sigmap::rt {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kVacuumPermittivity = 8.8541878128e-12;  // F/m
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kTiny = 1e-9;
constexpr std::size_t kRayChunks = 256;

double free_space_gain(double wavelength, double length) {
  const double a = wavelength / (4.0 * kPi * length);
  return a * a;
}

// Scene walls and rooftops bucketed into a uniform grid over the area.
class SceneIndex {
 public:
  struct WallGeom {
    Vec2 a;
    Vec2 b;
    Vec2 normal;  // unit, horizontal
    double height;
    const geo::Material* material;
  };
  struct RoofGeom {
    std::vector<Vec2> polygon;
    double height;
    double x0, x1, y0, y1;
    bool contains(Vec2 p) const {
      return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1 && geo::point_in_polygon(p, polygon);
    }
  };

  SceneIndex(const geo::ExtrudedScene& scene, const geo::GeoArea& area)
      : side_x_(area.side_x), side_y_(area.side_y) {
    cell_ = std::max(4.0 * area.resolution(), 8.0);
    nx_ = std::max(1, static_cast<int>(std::ceil(side_x_ / cell_)));
    ny_ = std::max(1, static_cast<int>(std::ceil(side_y_ / cell_)));
    cell_walls_.resize(static_cast<std::size_t>(nx_ * ny_));
    cell_roofs_.resize(static_cast<std::size_t>(nx_ * ny_));

    wall_ids_.assign(scene.walls.size(), -1);
    for (std::size_t i = 0; i < scene.walls.size(); ++i) {
      const auto& w = scene.walls[i];
      const Vec2 d = w.b - w.a;
      const double len = norm(d);
      if (len < kTiny || w.height <= 0.0) continue;
      const int id = static_cast<int>(walls_.size());
      wall_ids_[i] = id;
      source_wall_.push_back(static_cast<int>(i));
      walls_.push_back({w.a, w.b, {-d.y / len, d.x / len}, w.height, &scene.material(w)});
      for_cells(std::min(w.a.x, w.b.x), std::max(w.a.x, w.b.x), std::min(w.a.y, w.b.y), std::max(w.a.y, w.b.y),
                [&](std::size_t c) { cell_walls_[c].push_back(id); });
    }
    for (const auto& r : scene.rooftops) {
      if (r.polygon.size() < 3) continue;
      RoofGeom g{r.polygon, r.height, kInf, -kInf, kInf, -kInf};
      for (const auto& p : r.polygon) {
        g.x0 = std::min(g.x0, p.x);
        g.x1 = std::max(g.x1, p.x);
        g.y0 = std::min(g.y0, p.y);
        g.y1 = std::max(g.y1, p.y);
      }
      const int id = static_cast<int>(roofs_.size());
      roofs_.push_back(std::move(g));
      const auto& rg = roofs_.back();
      for_cells(rg.x0, rg.x1, rg.y0, rg.y1, [&](std::size_t c) { cell_roofs_[c].push_back(id); });
    }
  }

  const std::vector<WallGeom>& walls() const { return walls_; }
  int source_wall(int id) const { return source_wall_[static_cast<std::size_t>(id)]; }
  double side_x() const { return side_x_; }
  double side_y() const { return side_y_; }

  struct Hit {
    double t = kInf;
    int wall = -1;  // -1 with finite t means a rooftop
  };

  // First wall struck below its top, or rooftop landed on, by the ray
  // p + t*u (|u| = 1), z(t) = z0 + slope*t, for t in (0, t_limit].
  Hit first_hit(Vec2 p, Vec2 u, double z0, double slope, double t_limit, int skip_wall) const {
    Hit best;
    const Vec2 end = p + t_limit * u;
    walk_pixels(p, end, cell_, nx_, ny_, [&](int cx, int cy, double, double t_out) {
      const std::size_t c = static_cast<std::size_t>(cy) * nx_ + cx;
      for (int id : cell_walls_[c]) {
        if (id == skip_wall) continue;
        const auto& w = walls_[static_cast<std::size_t>(id)];
        const Vec2 e = w.b - w.a;
        const double denom = cross(u, e);
        if (std::abs(denom) < 1e-12) continue;
        const Vec2 ap = w.a - p;
        const double t = cross(ap, e) / denom;
        if (t <= kTiny || t >= best.t || t > t_limit) continue;
        const double s = cross(ap, u) / denom;
        if (s < 0.0 || s > 1.0) continue;
        if (z0 + slope * t >= w.height) continue;  // passes over the wall
        best = {t, id};
      }
      if (slope < 0.0) {
        for (int id : cell_roofs_[c]) {
          const auto& r = roofs_[static_cast<std::size_t>(id)];
          if (z0 <= r.height) continue;
          const double t = (r.height - z0) / slope;
          if (t <= kTiny || t >= best.t || t > t_limit) continue;
          if (r.contains(p + t * u)) best = {t, -1};
        }
      }
      return best.t > t_out * t_limit + kTiny;
    });
    return best;
  }

  // True when the 3-D segment a -> b meets no wall below its top and lands
  // on no rooftop. skip_a / skip_b exclude the walls at reflection points.
  bool segment_clear(Vec3 a, Vec3 b, int skip_a, int skip_b) const {
    bool clear = true;
    const Vec2 a2 = a.xy();
    const Vec2 d = b.xy() - a2;
    walk_pixels(a2, b.xy(), cell_, nx_, ny_, [&](int cx, int cy, double, double) {
      const std::size_t c = static_cast<std::size_t>(cy) * nx_ + cx;
      for (int id : cell_walls_[c]) {
        if (id == skip_a || id == skip_b) continue;
        const auto& w = walls_[static_cast<std::size_t>(id)];
        const Vec2 e = w.b - w.a;
        const double denom = cross(d, e);
        if (std::abs(denom) < 1e-12) continue;
        const Vec2 ap = w.a - a2;
        const double t = cross(ap, e) / denom;
        if (t <= kTiny || t >= 1.0 - kTiny) continue;
        const double s = cross(ap, d) / denom;
        if (s < 0.0 || s > 1.0) continue;
        if (a.z + (b.z - a.z) * t < w.height) {
          clear = false;
          return false;
        }
      }
      for (int id : cell_roofs_[c]) {
        const auto& r = roofs_[static_cast<std::size_t>(id)];
        if ((a.z - r.height) * (b.z - r.height) >= 0.0) continue;
        const double t = (r.height - a.z) / (b.z - a.z);
        if (r.contains(a2 + t * d)) {
          clear = false;
          return false;
        }
      }
      return true;
    });
    return clear;
  }

 private:
  template <typename F>
  void for_cells(double x0, double x1, double y0, double y1, F&& f) {
    const double pad = 1e-6;
    const int cx0 = std::clamp(static_cast<int>(std::floor((x0 - pad) / cell_)), 0, nx_ - 1);
    const int cx1 = std::clamp(static_cast<int>(std::floor((x1 + pad) / cell_)), 0, nx_ - 1);
    const int cy0 = std::clamp(static_cast<int>(std::floor((y0 - pad) / cell_)), 0, ny_ - 1);
    const int cy1 = std::clamp(static_cast<int>(std::floor((y1 + pad) / cell_)), 0, ny_ - 1);
    if (x1 < 0 || y1 < 0 || x0 > side_x_ || y0 > side_y_) return;
    for (int cy = cy0; cy <= cy1; ++cy)
      for (int cx = cx0; cx <= cx1; ++cx) f(static_cast<std::size_t>(cy) * nx_ + cx);
  }

  double side_x_, side_y_;
  double cell_ = 16.0;
  int nx_ = 1, ny_ = 1;
  std::vector<WallGeom> walls_;
  std::vector<int> wall_ids_;
  std::vector<int> source_wall_;
  std::vector<RoofGeom> roofs_;
  std::vector<std::vector<int>> cell_walls_;
  std::vector<std::vector<int>> cell_roofs_;
};

Vec2 mirror(Vec2 p, const SceneIndex::WallGeom& w) {
  const double dist = dot(p - w.a, w.normal);
  return p - (2.0 * dist) * w.normal;
}

double side_of(const SceneIndex::WallGeom& w, Vec2 p) { return dot(p - w.a, w.normal); }

std::uint64_t signature_hash(const std::vector<int>& walls) {
  std::uint64_t h = 0x84222325CBF29CE4ull ^ walls.size();
  for (int w : walls) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(w)));
  return h;
}

// Exact specular path through `walls` (index ids) via image sources.
std::optional<PathContribution> image_path(const SceneIndex& index, Vec3 tx, Vec3 rx, const std::vector<int>& walls,
                                           double f_hz) {
  const std::size_t k = walls.size();
  const auto& geom = index.walls();
  std::vector<Vec2> images(k + 1);
  images[0] = tx.xy();
  for (std::size_t j = 0; j < k; ++j) images[j + 1] = mirror(images[j], geom[static_cast<std::size_t>(walls[j])]);

  // points[0] = tx, points[k+1] = rx, points[1..k] = reflection points.
  std::vector<Vec2> points(k + 2);
  points[0] = tx.xy();
  points[k + 1] = rx.xy();
  Vec2 target = rx.xy();
  for (std::size_t j = k; j >= 1; --j) {
    const auto& w = geom[static_cast<std::size_t>(walls[j - 1])];
    const Vec2 src = images[j];
    const Vec2 d = target - src;
    const Vec2 e = w.b - w.a;
    const double denom = cross(d, e);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const Vec2 ap = w.a - src;
    const double t = cross(ap, e) / denom;
    const double s = cross(ap, d) / denom;
    if (t <= kTiny || t >= 1.0 - kTiny || s < 0.0 || s > 1.0) return std::nullopt;
    points[j] = src + t * d;
    target = points[j];
  }
  for (std::size_t j = 1; j <= k; ++j) {
    const auto& w = geom[static_cast<std::size_t>(walls[j - 1])];
    const double before = side_of(w, points[j - 1]);
    const double after = side_of(w, points[j + 1]);
    if (!(before * after > 0.0)) return std::nullopt;
  }

  std::vector<double> run(k + 2, 0.0);
  for (std::size_t j = 1; j < k + 2; ++j) run[j] = run[j - 1] + norm(points[j] - points[j - 1]);
  const double total = run[k + 1];
  if (total <= kTiny) return std::nullopt;

  std::vector<Vec3> q(k + 2);
  for (std::size_t j = 0; j < k + 2; ++j) q[j] = {points[j].x, points[j].y, tx.z + (rx.z - tx.z) * run[j] / total};
  for (std::size_t j = 1; j <= k; ++j)
    if (q[j].z >= geom[static_cast<std::size_t>(walls[j - 1])].height) return std::nullopt;

  for (std::size_t j = 0; j <= k; ++j) {
    const int skip_a = j >= 1 ? walls[j - 1] : -1;
    const int skip_b = j < k ? walls[j] : -1;
    if (!index.segment_clear(q[j], q[j + 1], skip_a, skip_b)) return std::nullopt;
  }

  double refl = 1.0;
  for (std::size_t j = 1; j <= k; ++j) {
    const auto& w = geom[static_cast<std::size_t>(walls[j - 1])];
    const Vec3 incoming = normalized(q[j] - q[j - 1]);
    const double cos_inc = std::min(1.0, std::abs(dot(incoming, {w.normal.x, w.normal.y, 0.0})));
    refl *= reflection_power(*w.material, f_hz, std::acos(cos_inc));
  }

  const double dz = rx.z - tx.z;
  const double length = std::sqrt(total * total + dz * dz);
  PathContribution path;
  path.path_length = length;
  path.bounce_count = static_cast<int>(k);
  path.departure = normalized(q[1] - q[0]);
  path.kind = k == 0 ? PathKind::direct : PathKind::reflected;
  path.power_gain = refl * free_space_gain(prop::kSpeedOfLight / f_hz, length);
  path.walls.reserve(k);
  for (int w : walls) path.walls.push_back(index.source_wall(w));
  return path;
}

struct Capture {
  std::uint32_t pixel;
  std::uint64_t signature;
  auto operator<=>(const Capture&) const = default;
};

struct ChunkCaptures {
  std::vector<Capture> captures;
  std::unordered_map<std::uint64_t, std::vector<int>> signatures;
};

}  // namespace

void RtConfig::validate() const {
  if (n_rays < 1) throw ConfigError("ray tracer needs at least one ray");
  if (max_bounces < 0) throw ConfigError("max_bounces must be >= 0");
  if (!(elevation_step_deg > 0.0) || elevation_max_deg < elevation_min_deg || elevation_min_deg < -90.0 ||
      elevation_max_deg > 90.0)
    throw ConfigError("invalid launch elevation fan");
  if (!(rx_height_m > 0.0)) throw ConfigError("rx height must be positive");
}

std::size_t PathSet::path_count() const {
  std::size_t n = 0;
  for (const auto& p : per_pixel) n += p.size();
  return n;
}

Vec3 reflect(Vec3 direction, Vec3 wall_normal) {
  return direction - (2.0 * dot(direction, wall_normal)) * wall_normal;
}

double fresnel_reflection(const geo::Material& material, double f_hz, double incidence_rad, Polarization pol) {
  const std::complex<double> eps(material.relative_permittivity,
                                 -material.conductivity / (2.0 * kPi * f_hz * kVacuumPermittivity));
  const double c = std::cos(incidence_rad);
  const double s = std::sin(incidence_rad);
  const std::complex<double> root = std::sqrt(eps - s * s);
  const std::complex<double> gamma =
      pol == Polarization::te ? (c - root) / (c + root) : (eps * c - root) / (eps * c + root);
  return std::min(1.0, std::abs(gamma));
}

double reflection_power(const geo::Material& material, double f_hz, double incidence_rad) {
  const double te = fresnel_reflection(material, f_hz, incidence_rad, Polarization::te);
  const double tm = fresnel_reflection(material, f_hz, incidence_rad, Polarization::tm);
  return 0.5 * (te * te + tm * tm);
}

double knife_edge_loss(double v) {
  if (v <= -0.78) return 0.0;
  const double a = v - 0.1;
  return 6.9 + 20.0 * std::log10(std::sqrt(a * a + 1.0) + a);
}

std::optional<PathContribution> diffraction_contribution(const geo::BuildingMap& map, Vec3 tx, Vec3 rx, double f_hz) {
  if (prop::los_test(map, tx, rx)) return std::nullopt;
  const double lambda = prop::kSpeedOfLight / f_hz;
  const Vec2 span = rx.xy() - tx.xy();
  const double ground = norm(span);
  if (ground <= kTiny) return std::nullopt;

  double best_v = -kInf;
  double best_t = 0.0;
  double best_h = 0.0;
  const auto& g = map.heights;
  walk_pixels(tx.xy(), rx.xy(), map.area.resolution(), g.width(), g.height(), [&](int ix, int iy, double t0, double t1) {
    const double h = g(ix, iy);
    if (h <= 0.0) return true;
    const double tm = 0.5 * (t0 + t1);
    const double d1 = tm * ground;
    const double d2 = ground - d1;
    if (d1 <= kTiny || d2 <= kTiny) return true;
    const double clearance = h - (tx.z + (rx.z - tx.z) * tm);
    const double v = clearance * std::sqrt(2.0 * ground / (lambda * d1 * d2));
    if (v > best_v) {
      best_v = v;
      best_t = tm;
      best_h = h;
    }
    return true;
  });
  if (best_v == -kInf) return std::nullopt;

  const Vec2 edge2 = tx.xy() + best_t * span;
  const Vec3 edge{edge2.x, edge2.y, best_h};
  const double length = norm(edge - tx) + norm(rx - edge);
  PathContribution path;
  path.kind = PathKind::diffracted;
  path.path_length = length;
  path.bounce_count = 0;
  path.departure = normalized(edge - tx);
  path.power_gain = free_space_gain(lambda, length) * std::pow(10.0, -knife_edge_loss(best_v) / 10.0);
  return path;
}

PathSet trace_paths(const geo::ExtrudedScene& scene, const geo::BuildingMap& map, const prop::CellConfig& cell,
                    const RtConfig& cfg) {
  cfg.validate();
  const auto& area = map.area;
  area.validate();
  prop::CellConfig rx_cell = cell;
  rx_cell.rx_height_m = cfg.rx_height_m;
  rx_cell.validate();

  const SceneIndex index(scene, area);
  const Vec3 tx = cell.tx_point(area);
  const double f_hz = cell.carrier_freq_hz;
  const double r = area.resolution();
  const int nx = area.grid_x;
  const int ny = area.grid_y;

  PathSet out;
  out.area = area;
  out.mask = building_mask(map);
  out.tx = tx;
  out.carrier_freq_hz = f_hz;
  out.per_pixel.resize(static_cast<std::size_t>(nx) * ny);

  auto rx_point = [&](std::size_t pixel) {
    const Vec2 c = area.pixel_center(static_cast<int>(pixel % nx), static_cast<int>(pixel / nx));
    return Vec3{c.x, c.y, cfg.rx_height_m};
  };

  // Direct and diffracted terms, per pixel.
  parallel_chunks(out.per_pixel.size(), static_cast<std::size_t>(ny), [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t pixel = b; pixel < e; ++pixel) {
      if (out.mask.storage()[pixel]) continue;
      const Vec3 rx = rx_point(pixel);
      auto& paths = out.per_pixel[pixel];
      if (index.segment_clear(tx, rx, -1, -1)) {
        PathContribution direct;
        direct.kind = PathKind::direct;
        direct.path_length = norm(rx - tx);
        direct.departure = normalized(rx - tx);
        direct.power_gain = free_space_gain(cell.wavelength(), direct.path_length);
        paths.push_back(std::move(direct));
      } else if (cfg.enable_diffraction) {
        if (auto d = diffraction_contribution(map, tx, rx, f_hz)) paths.push_back(std::move(*d));
      }
    }
  });

  if (!cfg.enable_reflection || cfg.max_bounces == 0 || index.walls().empty()) return out;

  // Ray fan: rings of equal elevation from the top of the fan downward.
  const auto n_elev =
      static_cast<std::size_t>(std::floor((cfg.elevation_max_deg - cfg.elevation_min_deg) / cfg.elevation_step_deg + 1e-9)) + 1;
  const std::size_t n_az = std::max<std::size_t>(1, (cfg.n_rays + n_elev - 1) / n_elev);
  const std::size_t total_rays = n_elev * n_az;
  const double band_lo = cfg.rx_height_m - r / 2;
  const double band_hi = cfg.rx_height_m + r / 2;
  const double ring_step = cfg.elevation_step_deg * kPi / 180.0;

  std::vector<ChunkCaptures> chunks(std::min(kRayChunks, total_rays));
  parallel_chunks(total_rays, chunks.size(), [&](std::size_t chunk, std::size_t b, std::size_t e) {
    auto& sink = chunks[chunk];
    std::vector<int> signature;
    for (std::size_t ray = b; ray < e; ++ray) {
      const double el_deg = cfg.elevation_max_deg - static_cast<double>(ray / n_az) * cfg.elevation_step_deg;
      const double az = (static_cast<double>(ray % n_az) + 0.5) * 2.0 * kPi / static_cast<double>(n_az);
      const double el = el_deg * kPi / 180.0;
      if (std::cos(el) < 1e-9) continue;
      const double slope = std::tan(el);
      Vec2 p = tx.xy();
      Vec2 u{std::sin(az), std::cos(az)};
      double z = tx.z;
      int last_wall = -1;
      double travelled = 0.0;  // horizontal distance before the current segment
      signature.clear();
      for (;;) {
        double t_exit = kInf;
        if (u.x > 0) t_exit = std::min(t_exit, (index.side_x() - p.x) / u.x);
        if (u.x < 0) t_exit = std::min(t_exit, -p.x / u.x);
        if (u.y > 0) t_exit = std::min(t_exit, (index.side_y() - p.y) / u.y);
        if (u.y < 0) t_exit = std::min(t_exit, -p.y / u.y);
        const double t_ground = slope < 0.0 ? -z / slope : kInf;
        const double t_limit = std::max(0.0, std::min(t_exit, t_ground));
        const auto hit = index.first_hit(p, u, z, slope, t_limit, last_wall);
        const double t_end = std::min(hit.t, t_limit);

        if (!signature.empty()) {
          const std::uint64_t sig = signature_hash(signature);
          bool seen = false;
          auto capture = [&](double c0, double c1) {
            c0 = std::max(c0, 0.0);
            c1 = std::min(c1, t_end);
            if (!(c1 > c0)) return;
            walk_pixels(p + c0 * u, p + c1 * u, r, nx, ny, [&](int ix, int iy, double, double) {
              const std::size_t pixel = static_cast<std::size_t>(iy) * nx + ix;
              if (!out.mask.storage()[pixel]) {
                sink.captures.push_back({static_cast<std::uint32_t>(pixel), sig});
                seen = true;
              }
              return true;
            });
          };
          // Fixed band one pixel tall around the receiver height...
          const double g0 = z - cfg.rx_height_m;
          if (slope < 0.0) {
            capture((band_hi - z) / slope, (band_lo - z) / slope);
          } else if (slope > 0.0) {
            capture((band_lo - z) / slope, (band_hi - z) / slope);
          } else if (z >= band_lo && z <= band_hi) {
            capture(0.0, t_end);
          }
          // ...widened with distance to the vertical spacing of adjacent
          // elevation rings, so far receivers fall between no two rings.
          // Over-capture is harmless: every candidate is re-solved exactly.
          {
            const double k = ring_step / (std::cos(el) * std::cos(el));
            double lo = 0.0, hi = t_end;
            bool ok = true;
            auto bound = [&](double a, double b) {  // a t <= b
              if (a > 0.0) {
                hi = std::min(hi, b / a);
              } else if (a < 0.0) {
                lo = std::max(lo, b / a);
              } else if (b < 0.0) {
                ok = false;
              }
            };
            bound(slope - k, k * travelled - g0);
            bound(-slope - k, k * travelled + g0);
            if (ok) capture(lo, hi);
          }
          if (seen) sink.signatures.try_emplace(sig, signature);
        }

        if (hit.wall < 0 || hit.t > t_limit || static_cast<int>(signature.size()) >= cfg.max_bounces) break;
        p = p + hit.t * u;
        z += slope * hit.t;
        travelled += hit.t;
        const auto& w = index.walls()[static_cast<std::size_t>(hit.wall)];
        u = u - (2.0 * dot(u, w.normal)) * w.normal;
        signature.push_back(hit.wall);
        last_wall = hit.wall;
      }
    }
    std::sort(sink.captures.begin(), sink.captures.end());
    sink.captures.erase(std::unique(sink.captures.begin(), sink.captures.end()), sink.captures.end());
  });

  std::vector<Capture> captures;
  std::unordered_map<std::uint64_t, std::vector<int>> signatures;
  for (auto& c : chunks) {
    captures.insert(captures.end(), c.captures.begin(), c.captures.end());
    for (auto& [h, sig] : c.signatures) {
      const auto [it, inserted] = signatures.try_emplace(h, sig);
      if (!inserted && it->second != sig) throw std::logic_error("path signature hash collision");
    }
    c = {};
  }
  std::sort(captures.begin(), captures.end());
  captures.erase(std::unique(captures.begin(), captures.end()), captures.end());

  std::vector<std::optional<PathContribution>> evaluated(captures.size());
  parallel_chunks(captures.size(), kRayChunks, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      evaluated[i] = image_path(index, tx, rx_point(captures[i].pixel), signatures.at(captures[i].signature), f_hz);
    }
  });
  for (std::size_t i = 0; i < captures.size(); ++i) {
    if (evaluated[i]) out.per_pixel[captures[i].pixel].push_back(std::move(*evaluated[i]));
  }
  return out;
}

PGMap render_pg_map(const PathSet& paths, const prop::CellConfig& cell) {
  PGMap out(paths.area);
  out.mask = paths.mask;
  for (std::size_t pixel = 0; pixel < paths.per_pixel.size(); ++pixel) {
    if (out.mask.storage()[pixel]) {
      out.values.storage()[pixel] = 0.0f;
      continue;
    }
    double total = 0.0;
    for (const auto& p : paths.per_pixel[pixel]) {
      total += std::pow(10.0, prop::cell_gain_dbi(cell, p.departure) / 10.0) * p.power_gain;
    }
    out.values.storage()[pixel] = static_cast<float>(total > 0.0 ? 10.0 * std::log10(total) : kFloorDb);
  }
  return out;
}

PGMap trace_pg_map(const geo::ExtrudedScene& scene, const geo::BuildingMap& map, const prop::CellConfig& cell,
                   const RtConfig& cfg) {
  return render_pg_map(trace_paths(scene, map, cell, cfg), cell);
}

}  // namespace sigmap::rt
