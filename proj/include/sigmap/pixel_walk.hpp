#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "sigmap/vec.hpp"

namespace sigmap {

/// Amanatides-Woo traversal of the square pixels (size `cell`) crossed by the
/// 2-D segment a -> b. Calls visit(ix, iy, t_in, t_out) for each pixel in
/// order, with t the segment parameter in [0, 1]. Stops early when visit
/// returns false. Pixels outside [0, nx) x [0, ny) are skipped but the walk
/// continues through them.
template <typename Visit>
void walk_pixels(Vec2 a, Vec2 b, double cell, int nx, int ny, Visit&& visit) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  int ix = static_cast<int>(std::floor(a.x / cell));
  int iy = static_cast<int>(std::floor(a.y / cell));
  const int end_x = static_cast<int>(std::floor(b.x / cell));
  const int end_y = static_cast<int>(std::floor(b.y / cell));
  const int step_x = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
  const int step_y = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
  constexpr double inf = std::numeric_limits<double>::infinity();
  const double t_delta_x = step_x != 0 ? cell / std::abs(dx) : inf;
  const double t_delta_y = step_y != 0 ? cell / std::abs(dy) : inf;
  double t_max_x = inf;
  double t_max_y = inf;
  if (step_x > 0) t_max_x = ((ix + 1) * cell - a.x) / dx;
  if (step_x < 0) t_max_x = (ix * cell - a.x) / dx;
  if (step_y > 0) t_max_y = ((iy + 1) * cell - a.y) / dy;
  if (step_y < 0) t_max_y = (iy * cell - a.y) / dy;

  double t = 0.0;
  // Bounded by the Manhattan pixel distance; guards against FP drift.
  const int max_steps = std::abs(end_x - ix) + std::abs(end_y - iy) + 2;
  for (int s = 0; s < max_steps; ++s) {
    const double t_next = std::min({t_max_x, t_max_y, 1.0});
    if (ix >= 0 && iy >= 0 && ix < nx && iy < ny) {
      if (!visit(ix, iy, t, t_next)) return;
    }
    if (t_next >= 1.0) return;
    t = t_next;
    if (t_max_x < t_max_y) {
      ix += step_x;
      t_max_x += t_delta_x;
    } else {
      iy += step_y;
      t_max_y += t_delta_y;
    }
  }
}

}  // namespace sigmap
