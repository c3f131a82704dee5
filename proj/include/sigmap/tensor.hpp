#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sigmap::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& s);
std::string shape_string(const Shape& s);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward;  // accumulates into parents' grad
};

/// Reference-semantics handle to a node of the autograd tape.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  std::size_t numel() const { return node_->data.size(); }
  std::vector<T>& data() { return node_->data; }
  const std::vector<T>& data() const { return node_->data; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  T item() const { return node_->data.at(0); }

  /// Turns gradient tracking on or off for a leaf.
  void set_requires_grad(bool on);
  void zero_grad();
  /// Reverse sweep from a one-element tensor, seeding d(self)/d(self) = 1.
  void backward();
  /// Same storage values, cut from the tape.
  Tensor detach() const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<Node<T>> node_;
};

/// While alive on this thread, ops build no tape.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// All image tensors are (N, C, H, W), W fastest.

/// Square kernel, stride 1, zero padding; bias may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding);

/// 2x2 window, stride 2; ties go to the first element in row-major order.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x);

/// Kernel 2, stride 2; w is (C_in, C_out, 2, 2).
template <typename T>
Tensor<T> conv_transpose2(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  explicit BatchNormState(int channels = 0) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Train mode normalizes with batch statistics and updates `state`
/// (unbiased variance, momentum 0.1); eval mode uses `state`.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                       bool train);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

/// Channel concatenation of two tensors with equal N, H, W.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Mean of (pred - target)^2 over positions where mask == 0. `target` and
/// `mask` hold one value per element of pred. Throws ConstraintError when
/// every position is masked.
template <typename T>
Tensor<T> masked_mse(const Tensor<T>& pred, const std::vector<T>& target, const std::vector<std::uint8_t>& mask);

/// sum_i x_i * weights_i; a scalar probe for gradient checks.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& x, const std::vector<T>& weights);

}  // namespace sigmap::nn
