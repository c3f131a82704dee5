#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "sigmap/random.hpp"
#include "sigmap/synth.hpp"
#include "sigmap/unet.hpp"

namespace sigmap::testing {

using TD = nn::Tensor<double>;

inline TD random_tensor(nn::Shape s, Rng& rng, bool rg = true, double lo = -1, double hi = 1) {
  TD t(std::move(s), 0.0, rg);
  for (auto& v : t.data()) v = uniform(rng, lo, hi);
  return t;
}

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (auto& v : w) v = uniform(rng, -1, 1);
  return w;
}

// ||analytic - numeric|| / ||numeric|| for every leaf, central differences.
inline double fd_relative_error(const std::function<TD()>& loss, std::vector<TD> leaves, double h = 1e-6) {
  for (auto& l : leaves) l.zero_grad();
  loss().backward();
  double num2 = 0, diff2 = 0;
  for (auto& l : leaves) {
    const auto analytic = l.grad();
    for (std::size_t i = 0; i < l.numel(); ++i) {
      const double keep = l.data()[i];
      l.data()[i] = keep + h;
      const double up = loss().item();
      l.data()[i] = keep - h;
      const double down = loss().item();
      l.data()[i] = keep;
      const double numeric = (up - down) / (2 * h);
      num2 += numeric * numeric;
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
    }
  }
  return std::sqrt(diff2 / num2);
}


// Replaces every spatial kernel by its D4 average, so the network commutes
// with rotations and mirrors.
inline void symmetrize_kernels(nn::UNet<double>& net) {
  for (auto& [name, t] : net.named_parameters()) {
    if (t.shape().size() != 4) continue;
    const int k = t.dim(2);
    const std::size_t planes = t.numel() / static_cast<std::size_t>(k * k);
    for (std::size_t p = 0; p < planes; ++p) {
      Grid<double> g(k, k);
      for (int i = 0; i < k * k; ++i) g.storage()[i] = t.data()[p * k * k + i];
      Grid<double> avg(k, k, 0.0);
      for (int v = 0; v < 8; ++v) {
        const auto tv = synth::transform_d4(g, v);
        for (int i = 0; i < k * k; ++i) avg.storage()[i] += tv.storage()[i] / 8;
      }
      for (int i = 0; i < k * k; ++i) t.data()[p * k * k + i] = avg.storage()[i];
    }
  }
}

}  // namespace sigmap::testing
