#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sigmap/tensor.hpp"

namespace sigmap::nn {

struct UNetConfig {
  int in_channels = 2;
  int base_channels = 8;
  int depth = 4;
  int out_channels = 1;

  /// Throws ConfigError on non-positive sizes.
  void validate() const;
  int channels_at(int level) const { return base_channels << level; }
  bool operator==(const UNetConfig&) const = default;
};

/// Weights, biases and BN affine terms; running statistics excluded.
std::int64_t param_count(const UNetConfig& cfg);

template <typename T>
struct Conv {
  Tensor<T> weight;
  Tensor<T> bias;
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> state;
};

/// conv3x3 -> BN -> ReLU, twice.
template <typename T>
struct ConvBlock {
  Conv<T> conv1;
  BatchNorm<T> bn1;
  Conv<T> conv2;
  BatchNorm<T> bn2;
};

/// Encoder of `depth` blocks with 2x2 max pooling, a bottleneck block, a
/// decoder of transposed-conv upsampling + skip concatenation + block, and a
/// linear 1x1 head.
template <typename T>
class UNet {
 public:
  UNet() = default;
  /// Kaiming-uniform init: weights ~ U(-b, b), b = sqrt(6 / fan_in); biases
  /// ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); gamma 1, beta 0.
  UNet(const UNetConfig& cfg, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }

  /// x is (N, in_channels, H, W) with H, W divisible by 2^depth.
  Tensor<T> forward(const Tensor<T>& x, bool train);

  /// Trainable tensors in a fixed order with stable names.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  /// Running means and variances, by name.
  std::vector<std::pair<std::string, std::vector<T>*>> named_buffers();
  std::vector<Tensor<T>> parameters() const;
  std::int64_t parameter_count() const;

  void set_requires_grad(bool on);
  void zero_grad();

  /// Deep copy of all parameter and buffer values.
  UNet clone() const;
  /// Copies values from a network of identical configuration.
  void copy_from(const UNet& other);

  /// Channel counts entering each decoder block, deepest first
  /// (upsampled + skip).
  std::vector<int> decoder_input_channels() const;

 private:
  UNetConfig cfg_;
  std::vector<ConvBlock<T>> down_;
  ConvBlock<T> bottleneck_;
  std::vector<Conv<T>> up_;  // transposed convs, deepest first
  std::vector<ConvBlock<T>> dec_;
  Conv<T> head_;
};

template <typename T>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };
  Adam(std::vector<Tensor<T>> params, Options opt);
  explicit Adam(std::vector<Tensor<T>> params) : Adam(std::move(params), Options{}) {}
  /// One bias-corrected update from the current gradients.
  void step();
  void zero_grad();
  long steps() const { return t_; }

 private:
  std::vector<Tensor<T>> params_;
  Options opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace sigmap::nn
