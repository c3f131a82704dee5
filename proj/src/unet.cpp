#include "sigmap/unet.hpp"

#include <cmath>

#include "sigmap/error.hpp"
#include "sigmap/random.hpp"

namespace sigmap::nn {
namespace {

template <typename T>
Conv<T> make_conv(int c_in, int c_out, int k, Rng& rng) {
  Conv<T> c;
  const int fan_in = c_in * k * k;
  const double wb = std::sqrt(6.0 / fan_in), bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
  c.weight = Tensor<T>({c_out, c_in, k, k}, T(0), true);
  for (auto& v : c.weight.data()) v = static_cast<T>(uniform(rng, -wb, wb));
  c.bias = Tensor<T>({c_out}, T(0), true);
  for (auto& v : c.bias.data()) v = static_cast<T>(uniform(rng, -bb, bb));
  return c;
}

template <typename T>
Conv<T> make_up(int c_in, int c_out, Rng& rng) {
  // Transposed conv: each output sees c_in * 1 taps (kernel 2, stride 2).
  Conv<T> c;
  const int fan_in = c_in;
  const double wb = std::sqrt(6.0 / fan_in), bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
  c.weight = Tensor<T>({c_in, c_out, 2, 2}, T(0), true);
  for (auto& v : c.weight.data()) v = static_cast<T>(uniform(rng, -wb, wb));
  c.bias = Tensor<T>({c_out}, T(0), true);
  for (auto& v : c.bias.data()) v = static_cast<T>(uniform(rng, -bb, bb));
  return c;
}

template <typename T>
BatchNorm<T> make_bn(int c) {
  return {Tensor<T>({c}, T(1), true), Tensor<T>({c}, T(0), true), BatchNormState<T>(c)};
}

template <typename T>
ConvBlock<T> make_block(int c_in, int c_out, Rng& rng) {
  ConvBlock<T> b;
  b.conv1 = make_conv<T>(c_in, c_out, 3, rng);
  b.bn1 = make_bn<T>(c_out);
  b.conv2 = make_conv<T>(c_out, c_out, 3, rng);
  b.bn2 = make_bn<T>(c_out);
  return b;
}

template <typename T>
Tensor<T> run_block(ConvBlock<T>& b, const Tensor<T>& x, bool train) {
  auto y = relu(batch_norm2d(conv2d(x, b.conv1.weight, b.conv1.bias, 1), b.bn1.gamma, b.bn1.beta, b.bn1.state, train));
  return relu(batch_norm2d(conv2d(y, b.conv2.weight, b.conv2.bias, 1), b.bn2.gamma, b.bn2.beta, b.bn2.state, train));
}

template <typename T, typename F>
void visit_block(ConvBlock<T>& b, const std::string& prefix, F&& f) {
  f(prefix + ".conv1.weight", b.conv1.weight);
  f(prefix + ".conv1.bias", b.conv1.bias);
  f(prefix + ".bn1.gamma", b.bn1.gamma);
  f(prefix + ".bn1.beta", b.bn1.beta);
  f(prefix + ".conv2.weight", b.conv2.weight);
  f(prefix + ".conv2.bias", b.conv2.bias);
  f(prefix + ".bn2.gamma", b.bn2.gamma);
  f(prefix + ".bn2.beta", b.bn2.beta);
}

std::int64_t conv_params(std::int64_t c_in, std::int64_t c_out, std::int64_t k) { return c_in * c_out * k * k + c_out; }
std::int64_t block_params(std::int64_t c_in, std::int64_t c_out) {
  return conv_params(c_in, c_out, 3) + 2 * c_out + conv_params(c_out, c_out, 3) + 2 * c_out;
}

}  // namespace

void UNetConfig::validate() const {
  if (in_channels < 1 || base_channels < 1 || depth < 1 || out_channels < 1) {
    throw ConfigError("U-Net sizes must be positive");
  }
  if (depth > 8) throw ConfigError("U-Net depth above 8 is not supported");
}

std::int64_t param_count(const UNetConfig& cfg) {
  cfg.validate();
  std::int64_t total = 0;
  std::int64_t c_prev = cfg.in_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    total += block_params(c_prev, cfg.channels_at(l));
    c_prev = cfg.channels_at(l);
  }
  total += block_params(c_prev, cfg.channels_at(cfg.depth));
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const std::int64_t c = cfg.channels_at(l);
    total += 2 * c * c * 4 + c;      // transposed conv from 2c to c
    total += block_params(2 * c, c);  // after concatenation with the skip
  }
  total += conv_params(cfg.channels_at(0), cfg.out_channels, 1);
  return total;
}

template <typename T>
UNet<T>::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  Rng rng(seed);
  int c_prev = cfg.in_channels;
  for (int l = 0; l < cfg.depth; ++l) {
    down_.push_back(make_block<T>(c_prev, cfg.channels_at(l), rng));
    c_prev = cfg.channels_at(l);
  }
  bottleneck_ = make_block<T>(c_prev, cfg.channels_at(cfg.depth), rng);
  for (int l = cfg.depth - 1; l >= 0; --l) {
    up_.push_back(make_up<T>(cfg.channels_at(l + 1), cfg.channels_at(l), rng));
    dec_.push_back(make_block<T>(2 * cfg.channels_at(l), cfg.channels_at(l), rng));
  }
  head_ = make_conv<T>(cfg.channels_at(0), cfg.out_channels, 1, rng);
}

template <typename T>
Tensor<T> UNet<T>::forward(const Tensor<T>& x, bool train) {
  if (x.shape().size() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ConfigError("U-Net expects (N, " + std::to_string(cfg_.in_channels) + ", H, W), got " + shape_string(x.shape()));
  }
  const int mult = 1 << cfg_.depth;
  if (x.dim(2) % mult != 0 || x.dim(3) % mult != 0) {
    throw ConfigError("U-Net input H and W must be divisible by " + std::to_string(mult) + ", got " +
                      shape_string(x.shape()));
  }
  std::vector<Tensor<T>> skips;
  Tensor<T> h = x;
  for (auto& block : down_) {
    h = run_block(block, h, train);
    skips.push_back(h);
    h = max_pool2(h);
  }
  h = run_block(bottleneck_, h, train);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    h = conv_transpose2(h, up_[i].weight, up_[i].bias);
    h = concat_channels(skips[skips.size() - 1 - i], h);
    h = run_block(dec_[i], h, train);
  }
  return conv2d(h, head_.weight, head_.bias, 0);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> UNet<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto add = [&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, t); };
  auto& self = const_cast<UNet&>(*this);
  for (std::size_t i = 0; i < down_.size(); ++i) visit_block(self.down_[i], "down" + std::to_string(i), add);
  visit_block(self.bottleneck_, "bottleneck", add);
  for (std::size_t i = 0; i < up_.size(); ++i) {
    add("up" + std::to_string(i) + ".weight", up_[i].weight);
    add("up" + std::to_string(i) + ".bias", up_[i].bias);
    visit_block(self.dec_[i], "dec" + std::to_string(i), add);
  }
  add("head.weight", head_.weight);
  add("head.bias", head_.bias);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, std::vector<T>*>> UNet<T>::named_buffers() {
  std::vector<std::pair<std::string, std::vector<T>*>> out;
  auto add_block = [&](ConvBlock<T>& b, const std::string& p) {
    out.emplace_back(p + ".bn1.running_mean", &b.bn1.state.running_mean);
    out.emplace_back(p + ".bn1.running_var", &b.bn1.state.running_var);
    out.emplace_back(p + ".bn2.running_mean", &b.bn2.state.running_mean);
    out.emplace_back(p + ".bn2.running_var", &b.bn2.state.running_var);
  };
  for (std::size_t i = 0; i < down_.size(); ++i) add_block(down_[i], "down" + std::to_string(i));
  add_block(bottleneck_, "bottleneck");
  for (std::size_t i = 0; i < dec_.size(); ++i) add_block(dec_[i], "dec" + std::to_string(i));
  return out;
}

template <typename T>
std::vector<Tensor<T>> UNet<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::int64_t UNet<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& t : parameters()) n += static_cast<std::int64_t>(t.numel());
  return n;
}

template <typename T>
void UNet<T>::set_requires_grad(bool on) {
  for (auto& t : parameters()) t.set_requires_grad(on);
}

template <typename T>
void UNet<T>::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

template <typename T>
UNet<T> UNet<T>::clone() const {
  UNet out(cfg_, 0);
  out.copy_from(*this);
  return out;
}

template <typename T>
void UNet<T>::copy_from(const UNet& other) {
  if (!(other.cfg_ == cfg_)) throw ConfigError("copy_from needs identical U-Net configurations");
  auto dst = named_parameters();
  auto src = other.named_parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].second.data() = src[i].second.data();
  auto db = named_buffers();
  auto sb = const_cast<UNet&>(other).named_buffers();
  for (std::size_t i = 0; i < db.size(); ++i) *db[i].second = *sb[i].second;
}

template <typename T>
std::vector<int> UNet<T>::decoder_input_channels() const {
  std::vector<int> out;
  for (const auto& d : dec_) out.push_back(d.conv1.weight.dim(1));
  return out;
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, Options opt) : params_(std::move(params)), opt_(opt) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (p.grad().size() != p.numel() || m_[k].size() != p.numel()) throw ConfigError("Adam state shape mismatch");
    auto& data = p.data();
    const auto& grad = p.grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i];
      m_[k][i] = opt_.beta1 * m_[k][i] + (1.0 - opt_.beta1) * g;
      v_[k][i] = opt_.beta2 * v_[k][i] + (1.0 - opt_.beta2) * g * g;
      const double mh = m_[k][i] / c1, vh = v_[k][i] / c2;
      data[i] = static_cast<T>(data[i] - opt_.lr * mh / (std::sqrt(vh) + opt_.eps));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template class UNet<float>;
template class UNet<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace sigmap::nn
