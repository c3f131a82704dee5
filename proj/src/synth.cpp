#include "sigmap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "sigmap/error.hpp"

namespace sigmap::synth {

SSMap apply_link_budget(const PGMap& pg, const LinkBudgetDraw& draw) {
  SSMap out(pg.area);
  out.mask = pg.mask;
  const double offset = draw.offset();
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values.storage()[i] =
        out.mask.storage()[i] ? 0.0f : static_cast<float>(pg.values.storage()[i] + offset);
  }
  return out;
}

LinkBudgetDraw draw_link_budget(Rng& rng) {
  LinkBudgetDraw d;
  d.p_tx = uniform(rng, 10.0, 35.0);
  d.g_tx = uniform(rng, 10.0, 20.0);
  d.g_rx = uniform(rng, 10.0, 20.0);
  d.il = uniform(rng, -10.0, 10.0);
  return d;
}

SparseSSMap sample_sparse(const SSMap& ss, std::size_t n, Rng& rng) {
  std::vector<std::uint32_t> outdoor;
  outdoor.reserve(ss.values.size());
  for (std::size_t i = 0; i < ss.mask.size(); ++i)
    if (!ss.mask.storage()[i]) outdoor.push_back(static_cast<std::uint32_t>(i));
  if (n < 1 || n > outdoor.size()) {
    throw ConstraintError("cannot draw " + std::to_string(n) + " sparse samples from " +
                          std::to_string(outdoor.size()) + " outdoor pixels");
  }
  // Partial Fisher-Yates: the first n slots become the sample.
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(outdoor.size()) - 1));
    std::swap(outdoor[i], outdoor[j]);
  }
  SparseSSMap out;
  out.area = ss.area;
  out.samples.reserve(n);
  const int w = ss.width();
  for (std::size_t i = 0; i < n; ++i) {
    const int ix = static_cast<int>(outdoor[i] % w);
    const int iy = static_cast<int>(outdoor[i] / w);
    out.samples.push_back({ix, iy, ss.values(ix, iy)});
  }
  return out;
}

FloatGrid encode_sparse_channel(const SparseSSMap& sparse, const geo::GeoArea& area) {
  FloatGrid g(area.grid_x, area.grid_y, 0.0f);
  for (const auto& s : sparse.samples) {
    g.at(s.ix, s.iy) = static_cast<float>(std::clamp(normalize_db(s.value_dbm), 0.0, kSparseClampHigh));
  }
  return g;
}

int d4_inverse(int variant) { return variant >= 4 ? variant : (4 - variant) % 4; }

int d4_compose(int outer, int inner) {
  // Elements are r^k m^f acting as m first. r^a m^f r^b = r^(a + (f ? -b : b)) m^f.
  const int ka = outer % 4, fa = outer / 4;
  const int kb = inner % 4, fb = inner / 4;
  const int k = ((ka + (fa ? -kb : kb)) % 4 + 4) % 4;
  return (fa ^ fb) * 4 + k;
}

template <typename T>
Grid<T> transform_d4(const Grid<T>& g, int variant) {
  if (g.width() != g.height()) throw InputError("D4 transforms need a square grid");
  if (variant < 0 || variant >= kD4Variants) throw InputError("D4 variant must be in 0..7");
  const int n = g.width();
  const bool mirror = variant >= 4;
  const int turns = variant % 4;
  Grid<T> out(n, n);
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      int x = mirror ? n - 1 - ix : ix;
      int y = iy;
      for (int t = 0; t < turns; ++t) {
        const int nx = n - 1 - y;
        y = x;
        x = nx;
      }
      out(x, y) = g(ix, iy);
    }
  }
  return out;
}

template FloatGrid transform_d4(const FloatGrid&, int);
template MaskGrid transform_d4(const MaskGrid&, int);
template Grid<double> transform_d4(const Grid<double>&, int);

AugmentPair augment(const AugmentPair& pair, int variant) {
  AugmentPair out;
  out.inputs.reserve(pair.inputs.size());
  for (const auto& c : pair.inputs) out.inputs.push_back(transform_d4(c, variant));
  out.target = transform_d4(pair.target, variant);
  out.mask = transform_d4(pair.mask, variant);
  return out;
}

std::vector<bool> split_indices(std::size_t n, double train_ratio, std::uint64_t seed) {
  if (!(train_ratio > 0.0 && train_ratio <= 1.0)) throw ConfigError("train ratio must be in (0, 1]");
  const auto n_val = static_cast<std::size_t>(std::floor((1.0 - train_ratio) * static_cast<double>(n) + 1e-9));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  std::vector<bool> is_val(n, false);
  for (std::size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  return is_val;
}

ProceduralArea generate_procedural_area(std::uint64_t seed, const geo::GeoArea& area) {
  area.validate();
  Rng rng(seed);
  const double r = area.resolution();
  const int nx = area.grid_x, ny = area.grid_y;
  const auto side_cells = [&](double meters) { return std::max<std::int64_t>(1, std::llround(meters / r)); };
  const std::int64_t min_side = side_cells(16.0), max_side = side_cells(80.0);
  const auto target = uniform_int(rng, 10, 40);

  ProceduralArea out;
  MaskGrid covered(nx, ny, 0);
  std::size_t covered_count = 0;
  const std::size_t ratio_count = static_cast<std::size_t>(std::ceil(0.2 * nx * ny));
  while (static_cast<std::int64_t>(out.footprints.size()) < target || covered_count < ratio_count) {
    const auto w = uniform_int(rng, min_side, max_side);
    const auto h = uniform_int(rng, min_side, max_side);
    // Corners may fall outside; the rectangle is clipped but keeps >= 1 cell.
    const auto sx = uniform_int(rng, 1 - w, nx - 1);
    const auto sy = uniform_int(rng, 1 - h, ny - 1);
    const auto x0 = std::max<std::int64_t>(0, sx), x1 = std::min<std::int64_t>(nx, sx + w);
    const auto y0 = std::max<std::int64_t>(0, sy), y1 = std::min<std::int64_t>(ny, sy + h);
    const double height = 6.0 + 0.25 * static_cast<double>(uniform_int(rng, 0, 136));
    geo::Footprint f;
    f.polygon = {{x0 * r, y0 * r}, {x1 * r, y0 * r}, {x1 * r, y1 * r}, {x0 * r, y1 * r}};
    f.height = height;
    out.footprints.push_back(std::move(f));
    for (auto iy = y0; iy < y1; ++iy)
      for (auto ix = x0; ix < x1; ++ix) {
        auto& c = covered(static_cast<int>(ix), static_cast<int>(iy));
        covered_count += (c == 0);
        c = 1;
      }
  }
  out.map = geo::rasterize(out.footprints, area);
  return out;
}

}  // namespace sigmap::synth
