#include "sigmap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <unordered_set>

#include <Eigen/Core>

#include "sigmap/error.hpp"
#include "sigmap/parallel.hpp"

namespace sigmap::nn {
namespace {

thread_local bool t_grad_enabled = true;

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

template <typename T>
std::shared_ptr<Node<T>> make_node(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  auto n = std::make_shared<Node<T>>();
  n->data.assign(numel(shape), T(0));
  n->shape = std::move(shape);
  if (t_grad_enabled) {
    for (const auto* t : inputs) {
      if (t && t->defined() && t->requires_grad()) {
        n->requires_grad = true;
        n->parents.push_back(t->node());
      }
    }
  }
  if (n->requires_grad) n->grad.assign(n->data.size(), T(0));
  return n;
}

template <typename T>
bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

void require_image(const Shape& s, const char* op) {
  require(s.size() == 4, std::string(op) + " expects an (N, C, H, W) tensor, got " + shape_string(s));
}

// Sum per-sample partial gradients in sample order (thread-count independent).
template <typename T>
void reduce_into(std::vector<T>& dst, const std::vector<std::vector<T>>& parts) {
  for (const auto& p : parts)
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += p[i];
}

template <typename T>
void im2col(const T* x, int c_in, int h, int w, int k, int pad, T* col) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          T* out = row + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h || x_lo >= x_hi) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * h + sy) * w;
          std::fill(out, out + x_lo, T(0));
          std::memcpy(out + x_lo, src + x_lo + dx, sizeof(T) * static_cast<std::size_t>(x_hi - x_lo));
          std::fill(out + x_hi, out + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int k, int pad, T* dx_out) {
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < c_in; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c) * k * k + ky * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* in = row + static_cast<std::size_t>(y) * w;
          T* dst = dx_out + (static_cast<std::size_t>(c) * h + sy) * w;
          for (int x = x_lo; x < x_hi; ++x) dst[x + dx] += in[x];
        }
      }
    }
  }
}

}  // namespace

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ConfigError("negative tensor dimension");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + ")";
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->data.assign(nn::numel(shape), fill);
  node_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  if (nn::numel(shape) != data.size()) {
    throw ConfigError("tensor data has " + std::to_string(data.size()) + " values for shape " + shape_string(shape));
  }
  Tensor t(std::make_shared<Node<T>>());
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(data);
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->data.size(), T(0));
  } else {
    node_->grad.clear();
  }
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
void Tensor<T>::backward() {
  if (node_->data.size() != 1) throw ConfigError("backward needs a one-element tensor");
  if (!node_->requires_grad) throw ConfigError("backward on a tensor that does not require grad");
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), data(), false);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding) {
  require_image(x.shape(), "conv2d");
  require(w.shape().size() == 4 && w.dim(2) == w.dim(3), "conv2d weight must be (O, C, k, k)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), k = w.dim(2);
  require(w.dim(1) == c, "conv2d channel mismatch: input " + shape_string(x.shape()) + ", weight " +
                             shape_string(w.shape()));
  require(padding >= 0 && h + 2 * padding - k + 1 == h && wd + 2 * padding - k + 1 == wd,
          "conv2d padding must preserve spatial size");
  if (b.defined()) require(b.numel() == static_cast<std::size_t>(o), "conv2d bias size mismatch");

  auto out = make_node<T>({n, o, h, wd}, {&x, &w, &b});
  const std::size_t hw = static_cast<std::size_t>(h) * wd;
  const std::size_t kk = static_cast<std::size_t>(c) * k * k;
  const bool direct = k == 1 && padding == 0;
  const auto nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;

  parallel_chunks(static_cast<std::size_t>(n), static_cast<std::size_t>(n), [&](std::size_t, std::size_t s0, std::size_t s1) {
    std::vector<T> col(direct ? 0 : kk * hw);
    for (std::size_t s = s0; s < s1; ++s) {
      const T* xs = nx->data.data() + s * c * hw;
      if (!direct) im2col(xs, c, h, wd, k, padding, col.data());
      CMapR<T> cm(direct ? xs : col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
      CMapR<T> wm(nw->data.data(), o, static_cast<Eigen::Index>(kk));
      MapR<T> ym(out->data.data() + s * o * hw, o, static_cast<Eigen::Index>(hw));
      ym.noalias() = wm * cm;
      if (nb)
        for (int oc = 0; oc < o; ++oc) ym.row(oc).array() += nb->data[static_cast<std::size_t>(oc)];
    }
  });

  if (out->requires_grad) {
    Node<T>* self = out.get();
    out->backward = [self, nx, nw, nb, n, c, h, wd, o, k, padding, hw, kk, direct]() {
      const bool gx = nx->requires_grad, gw = nw->requires_grad, gb = nb && nb->requires_grad;
      std::vector<std::vector<T>> dw_parts(gw ? n : 0, std::vector<T>(nw->data.size(), T(0)));
      std::vector<std::vector<T>> db_parts(gb ? n : 0, std::vector<T>(static_cast<std::size_t>(o), T(0)));
      parallel_chunks(static_cast<std::size_t>(n), static_cast<std::size_t>(n), [&](std::size_t, std::size_t s0, std::size_t s1) {
        std::vector<T> col(direct ? 0 : kk * hw);
        std::vector<T> dcol(gx && !direct ? kk * hw : 0);
        for (std::size_t s = s0; s < s1; ++s) {
          CMapR<T> dy(self->grad.data() + s * o * hw, o, static_cast<Eigen::Index>(hw));
          CMapR<T> wm(nw->data.data(), o, static_cast<Eigen::Index>(kk));
          const T* xs = nx->data.data() + s * c * hw;
          if (gw) {
            if (!direct) im2col(xs, c, h, wd, k, padding, col.data());
            CMapR<T> cm(direct ? xs : col.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
            MapR<T> dwm(dw_parts[s].data(), o, static_cast<Eigen::Index>(kk));
            dwm.noalias() = dy * cm.transpose();
          }
          if (gb) {
            // Plain loop: Eigen reductions peel by address, which breaks run-to-run reproducibility.
            for (int oc = 0; oc < o; ++oc) {
              const T* row = dy.data() + static_cast<std::size_t>(oc) * hw;
              db_parts[s][static_cast<std::size_t>(oc)] = std::accumulate(row, row + hw, T(0));
            }
          }
          if (gx) {
            T* dxs = nx->grad.data() + s * c * hw;
            if (direct) {
              MapR<T> dxm(dxs, static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
              dxm.noalias() += wm.transpose() * dy;
            } else {
              MapR<T> dcm(dcol.data(), static_cast<Eigen::Index>(kk), static_cast<Eigen::Index>(hw));
              dcm.noalias() = wm.transpose() * dy;
              col2im_add(dcol.data(), c, h, wd, k, padding, dxs);
            }
          }
        }
      });
      if (gw) reduce_into(nw->grad, dw_parts);
      if (gb) reduce_into(nb->grad, db_parts);
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x) {
  require_image(x.shape(), "max_pool2");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial dims, got " + shape_string(x.shape()));
  auto out = make_node<T>({n, c, h / 2, w / 2}, {&x});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out->data.size());
  const auto& src = x.data();
  std::size_t o = 0;
  for (int p = 0; p < n * c; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * h * w;
    for (int y = 0; y < h; y += 2) {
      for (int xx = 0; xx < w; xx += 2, ++o) {
        std::size_t best = base + static_cast<std::size_t>(y) * w + xx;
        for (std::size_t cand : {best + 1, best + w, best + w + 1})
          if (src[cand] > src[best]) best = cand;
        out->data[o] = src[best];
        (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  if (out->requires_grad) {
    Node<T>* self = out.get();
    auto nx = x.node();
    out->backward = [self, nx, argmax]() {
      for (std::size_t i = 0; i < argmax->size(); ++i) nx->grad[(*argmax)[i]] += self->grad[i];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> conv_transpose2(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require_image(x.shape(), "conv_transpose2");
  require(w.shape().size() == 4 && w.dim(2) == 2 && w.dim(3) == 2, "conv_transpose2 weight must be (C_in, C_out, 2, 2)");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(1);
  require(w.dim(0) == c, "conv_transpose2 channel mismatch: input " + shape_string(x.shape()) + ", weight " +
                             shape_string(w.shape()));
  if (b.defined()) require(b.numel() == static_cast<std::size_t>(o), "conv_transpose2 bias size mismatch");
  auto out = make_node<T>({n, o, 2 * h, 2 * wd}, {&x, &w, &b});
  const std::size_t hw = static_cast<std::size_t>(h) * wd;
  const std::size_t o4 = static_cast<std::size_t>(o) * 4;
  const auto nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;

  parallel_chunks(static_cast<std::size_t>(n), static_cast<std::size_t>(n), [&](std::size_t, std::size_t s0, std::size_t s1) {
    MatR<T> z(static_cast<Eigen::Index>(o4), static_cast<Eigen::Index>(hw));
    for (std::size_t s = s0; s < s1; ++s) {
      CMapR<T> xm(nx->data.data() + s * c * hw, c, static_cast<Eigen::Index>(hw));
      CMapR<T> wm(nw->data.data(), c, static_cast<Eigen::Index>(o4));
      z.noalias() = wm.transpose() * xm;
      T* ys = out->data.data() + s * o4 * hw;
      for (int oc = 0; oc < o; ++oc) {
        const T bias = nb ? nb->data[static_cast<std::size_t>(oc)] : T(0);
        T* plane = ys + static_cast<std::size_t>(oc) * 4 * hw;
        for (int d = 0; d < 4; ++d) {
          const int dy = d / 2, dx = d % 2;
          const T* zr = z.data() + (static_cast<std::size_t>(oc) * 4 + d) * hw;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < wd; ++xx)
              plane[static_cast<std::size_t>(2 * y + dy) * 2 * wd + 2 * xx + dx] = zr[static_cast<std::size_t>(y) * wd + xx] + bias;
        }
      }
    }
  });

  if (out->requires_grad) {
    Node<T>* self = out.get();
    out->backward = [self, nx, nw, nb, n, c, h, wd, o, hw, o4]() {
      const bool gx = nx->requires_grad, gw = nw->requires_grad, gb = nb && nb->requires_grad;
      std::vector<std::vector<T>> dw_parts(gw ? n : 0, std::vector<T>(nw->data.size(), T(0)));
      std::vector<std::vector<T>> db_parts(gb ? n : 0, std::vector<T>(static_cast<std::size_t>(o), T(0)));
      parallel_chunks(static_cast<std::size_t>(n), static_cast<std::size_t>(n), [&](std::size_t, std::size_t s0, std::size_t s1) {
        MatR<T> dz(static_cast<Eigen::Index>(o4), static_cast<Eigen::Index>(hw));
        for (std::size_t s = s0; s < s1; ++s) {
          const T* gs = self->grad.data() + s * o4 * hw;
          for (int oc = 0; oc < o; ++oc) {
            const T* plane = gs + static_cast<std::size_t>(oc) * 4 * hw;
            T bsum = T(0);
            for (int d = 0; d < 4; ++d) {
              const int dy = d / 2, dx = d % 2;
              T* zr = dz.data() + (static_cast<std::size_t>(oc) * 4 + d) * hw;
              for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < wd; ++xx) {
                  const T g = plane[static_cast<std::size_t>(2 * y + dy) * 2 * wd + 2 * xx + dx];
                  zr[static_cast<std::size_t>(y) * wd + xx] = g;
                  bsum += g;
                }
            }
            if (gb) db_parts[s][static_cast<std::size_t>(oc)] = bsum;
          }
          CMapR<T> wm(nw->data.data(), c, static_cast<Eigen::Index>(o4));
          CMapR<T> xm(nx->data.data() + s * c * hw, c, static_cast<Eigen::Index>(hw));
          if (gx) {
            MapR<T> dxm(nx->grad.data() + s * c * hw, c, static_cast<Eigen::Index>(hw));
            dxm.noalias() += wm * dz;
          }
          if (gw) {
            MapR<T> dwm(dw_parts[s].data(), c, static_cast<Eigen::Index>(o4));
            dwm.noalias() = xm * dz.transpose();
          }
        }
      });
      if (gw) reduce_into(nw->grad, dw_parts);
      if (gb) reduce_into(nb->grad, db_parts);
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                       bool train) {
  require_image(x.shape(), "batch_norm2d");
  const int n = x.dim(0), c = x.dim(1);
  const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t m = static_cast<std::size_t>(n) * hw;
  require(gamma.numel() == static_cast<std::size_t>(c) && beta.numel() == static_cast<std::size_t>(c),
          "batch_norm2d affine size mismatch");
  require(state.running_mean.size() == static_cast<std::size_t>(c) && state.running_var.size() == static_cast<std::size_t>(c),
          "batch_norm2d running stats size mismatch");
  if (train) require(n >= 2, "batch_norm2d in train mode needs a batch of at least 2");

  auto out = make_node<T>(x.shape(), {&x, &gamma, &beta});
  auto mean = std::make_shared<std::vector<T>>(c);
  auto inv_std = std::make_shared<std::vector<T>>(c);
  const auto& xd = x.data();
  for (int ch = 0; ch < c; ++ch) {
    double mu, var;
    if (train) {
      double s = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = xd.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (int b = 0; b < n; ++b) {
        const T* p = xd.data() + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / static_cast<double>(m);
      auto& rm = state.running_mean[static_cast<std::size_t>(ch)];
      auto& rv = state.running_var[static_cast<std::size_t>(ch)];
      rm = static_cast<T>((1.0 - kBatchNormMomentum) * rm + kBatchNormMomentum * mu);
      rv = static_cast<T>((1.0 - kBatchNormMomentum) * rv +
                          kBatchNormMomentum * var * static_cast<double>(m) / static_cast<double>(m - 1));
    } else {
      mu = state.running_mean[static_cast<std::size_t>(ch)];
      var = state.running_var[static_cast<std::size_t>(ch)];
    }
    (*mean)[static_cast<std::size_t>(ch)] = static_cast<T>(mu);
    const double is = 1.0 / std::sqrt(var + kBatchNormEps);
    (*inv_std)[static_cast<std::size_t>(ch)] = static_cast<T>(is);
    const double g = gamma.data()[static_cast<std::size_t>(ch)], bt = beta.data()[static_cast<std::size_t>(ch)];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
      for (std::size_t i = 0; i < hw; ++i) out->data[off + i] = static_cast<T>(g * (xd[off + i] - mu) * is + bt);
    }
  }

  if (out->requires_grad) {
    Node<T>* self = out.get();
    auto nx = x.node(), ng = gamma.node(), nb = beta.node();
    out->backward = [self, nx, ng, nb, mean, inv_std, n, c, hw, m, train]() {
      for (int ch = 0; ch < c; ++ch) {
        const double mu = (*mean)[static_cast<std::size_t>(ch)], is = (*inv_std)[static_cast<std::size_t>(ch)];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int b = 0; b < n; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double dy = self->grad[off + i];
            sum_dy += dy;
            sum_dy_xhat += dy * (nx->data[off + i] - mu) * is;
          }
        }
        if (ng->requires_grad) ng->grad[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy_xhat);
        if (nb->requires_grad) nb->grad[static_cast<std::size_t>(ch)] += static_cast<T>(sum_dy);
        if (!nx->requires_grad) continue;
        const double g = ng->data[static_cast<std::size_t>(ch)];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int b = 0; b < n; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * c + ch) * hw;
          for (std::size_t i = 0; i < hw; ++i) {
            const double dy = self->grad[off + i];
            double dx;
            if (train) {
              const double xhat = (nx->data[off + i] - mu) * is;
              dx = g * is * (dy - inv_m * sum_dy - xhat * inv_m * sum_dy_xhat);
            } else {
              dx = g * is * dy;
            }
            nx->grad[off + i] += static_cast<T>(dx);
          }
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = make_node<T>(x.shape(), {&x});
  const auto& xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) out->data[i] = xd[i] > T(0) ? xd[i] : T(0);
  if (out->requires_grad) {
    Node<T>* self = out.get();
    auto nx = x.node();
    out->backward = [self, nx]() {
      for (std::size_t i = 0; i < nx->data.size(); ++i)
        if (nx->data[i] > T(0)) nx->grad[i] += self->grad[i];
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_image(a.shape(), "concat_channels");
  require_image(b.shape(), "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          "concat_channels shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::size_t hw = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  auto out = make_node<T>({n, ca + cb, a.dim(2), a.dim(3)}, {&a, &b});
  for (int s = 0; s < n; ++s) {
    std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(s * ca * hw), ca * hw,
                out->data.begin() + static_cast<std::ptrdiff_t>(s * (ca + cb) * hw));
    std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(s * cb * hw), cb * hw,
                out->data.begin() + static_cast<std::ptrdiff_t>((s * (ca + cb) + ca) * hw));
  }
  if (out->requires_grad) {
    Node<T>* self = out.get();
    auto na = a.node(), nb = b.node();
    out->backward = [self, na, nb, n, ca, cb, hw]() {
      for (int s = 0; s < n; ++s) {
        const T* g = self->grad.data() + static_cast<std::size_t>(s) * (ca + cb) * hw;
        if (na->requires_grad) {
          T* d = na->grad.data() + static_cast<std::size_t>(s) * ca * hw;
          for (std::size_t i = 0; i < ca * hw; ++i) d[i] += g[i];
        }
        if (nb->requires_grad) {
          T* d = nb->grad.data() + static_cast<std::size_t>(s) * cb * hw;
          for (std::size_t i = 0; i < cb * hw; ++i) d[i] += g[ca * hw + i];
        }
      }
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const std::vector<T>& target, const std::vector<std::uint8_t>& mask) {
  require(target.size() == pred.numel() && mask.size() == pred.numel(), "masked_mse size mismatch");
  std::size_t count = 0;
  double sum = 0.0;
  const auto& p = pred.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i]) continue;
    const double d = static_cast<double>(p[i]) - target[i];
    sum += d * d;
    ++count;
  }
  if (count == 0) throw ConstraintError("masked_mse: every pixel is masked");
  auto out = make_node<T>({1}, {&pred});
  out->data[0] = static_cast<T>(sum / static_cast<double>(count));
  if (out->requires_grad) {
    Node<T>* self = out.get();
    auto np = pred.node();
    auto tgt = std::make_shared<std::vector<T>>(target);
    auto msk = std::make_shared<std::vector<std::uint8_t>>(mask);
    out->backward = [self, np, tgt, msk, count]() {
      const double scale = 2.0 * static_cast<double>(self->grad[0]) / static_cast<double>(count);
      for (std::size_t i = 0; i < np->data.size(); ++i)
        if (!(*msk)[i]) np->grad[i] += static_cast<T>(scale * (static_cast<double>(np->data[i]) - (*tgt)[i]));
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights) {
  require(weights.size() == x.numel(), "weighted_sum size mismatch");
  auto out = make_node<T>({1}, {&x});
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(x.data()[i]) * weights[i];
  out->data[0] = static_cast<T>(s);
  if (out->requires_grad) {
    Node<T>* self = out.get();
    auto nx = x.node();
    auto wts = std::make_shared<std::vector<T>>(weights);
    out->backward = [self, nx, wts]() {
      for (std::size_t i = 0; i < wts->size(); ++i) nx->grad[i] += self->grad[0] * (*wts)[i];
    };
  }
  return Tensor<T>(out);
}

#define SIGMAP_INSTANTIATE(T)                                                                                        \
  template class Tensor<T>;                                                                                          \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int);                             \
  template Tensor<T> max_pool2(const Tensor<T>&);                                                                    \
  template Tensor<T> conv_transpose2(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, bool);  \
  template Tensor<T> relu(const Tensor<T>&);                                                                         \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> masked_mse(const Tensor<T>&, const std::vector<T>&, const std::vector<std::uint8_t>&);         \
  template Tensor<T> weighted_sum(const Tensor<T>&, const std::vector<T>&);

SIGMAP_INSTANTIATE(float)
SIGMAP_INSTANTIATE(double)

}  // namespace sigmap::nn
