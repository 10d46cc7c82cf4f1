#pragma once

// Two-layer patch embedder. Each p x p x 3 input patch is flattened in
// (row, column, channel) order and mapped to one feature cell:
//
//   h = relu(patch * W1 + b1),   f = h * W2 + b2
//
// Parameters live in one flat buffer (W1 | b1 | W2 | b2) so the optimizer and
// serialization treat them uniformly.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "focal/error.hpp"
#include "focal/random.hpp"
#include "focal/tensor.hpp"

namespace focal {

struct ExtractorShape {
  std::size_t patch = 4;
  std::size_t hidden = 64;
  std::size_t embed = 32;

  std::size_t input_dim() const noexcept { return patch * patch * 3; }
  std::size_t w1_size() const noexcept { return input_dim() * hidden; }
  std::size_t w2_size() const noexcept { return hidden * embed; }
  std::size_t total() const noexcept { return w1_size() + hidden + w2_size() + embed; }

  void validate() const {
    if (patch == 0 || hidden == 0 || embed == 0) throw ConfigError("extractor sizes must be >= 1");
  }
  bool operator==(const ExtractorShape&) const = default;
};

template <typename T>
class BasicExtractorParams {
 public:
  BasicExtractorParams() = default;
  explicit BasicExtractorParams(ExtractorShape shape) : shape_(shape), values_(shape.total(), T{}) {
    shape_.validate();
  }
  BasicExtractorParams(ExtractorShape shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
    shape_.validate();
    if (values_.size() != shape_.total()) throw DimensionError("parameter buffer does not match extractor shape");
  }

  const ExtractorShape& shape() const noexcept { return shape_; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }

  // W1 is input_dim x hidden, row-major; W2 is hidden x embed.
  std::span<T> w1() noexcept { return values().subspan(0, shape_.w1_size()); }
  std::span<T> b1() noexcept { return values().subspan(shape_.w1_size(), shape_.hidden); }
  std::span<T> w2() noexcept { return values().subspan(shape_.w1_size() + shape_.hidden, shape_.w2_size()); }
  std::span<T> b2() noexcept { return values().subspan(shape_.total() - shape_.embed, shape_.embed); }
  std::span<const T> w1() const noexcept { return values().subspan(0, shape_.w1_size()); }
  std::span<const T> b1() const noexcept { return values().subspan(shape_.w1_size(), shape_.hidden); }
  std::span<const T> w2() const noexcept {
    return values().subspan(shape_.w1_size() + shape_.hidden, shape_.w2_size());
  }
  std::span<const T> b2() const noexcept { return values().subspan(shape_.total() - shape_.embed, shape_.embed); }

  template <typename U>
  BasicExtractorParams<U> cast() const {
    std::vector<U> v(values_.size());
    std::transform(values_.begin(), values_.end(), v.begin(), [](T x) { return static_cast<U>(x); });
    return BasicExtractorParams<U>(shape_, std::move(v));
  }

  bool operator==(const BasicExtractorParams&) const = default;

 private:
  ExtractorShape shape_;
  std::vector<T> values_;
};

using ExtractorParams = BasicExtractorParams<float>;
using ExtractorGrads = BasicExtractorParams<float>;

/// He-normal first layer, Glorot-style second layer, zero biases.
inline ExtractorParams init_extractor(ExtractorShape shape, std::uint64_t seed) {
  ExtractorParams p(shape);
  Rng rng(seed);
  const double s1 = std::sqrt(2.0 / static_cast<double>(shape.input_dim()));
  const double s2 = std::sqrt(1.0 / static_cast<double>(shape.hidden));
  for (auto& w : p.w1()) w = static_cast<float>(rng.normal(0.0, s1));
  for (auto& w : p.w2()) w = static_cast<float>(rng.normal(0.0, s2));
  return p;
}

namespace detail {

inline void check_extract_input(const std::vector<std::size_t>& dims, std::size_t patch) {
  if (dims.size() != 3 || dims[2] != 3) throw DimensionError("extractor input must be H x W x 3");
  if (dims[0] % patch != 0 || dims[1] % patch != 0)
    throw DimensionError("image extents " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) +
                         " are not divisible by patch size " + std::to_string(patch));
}

template <typename T>
void gather_patch(const Tensor<T>& image, std::size_t cy, std::size_t cx, std::size_t p, std::span<T> out) {
  const std::size_t width = image.dims()[1];
  std::size_t n = 0;
  for (std::size_t dy = 0; dy < p; ++dy) {
    const T* src = image.data() + ((cy * p + dy) * width + cx * p) * 3;
    for (std::size_t k = 0; k < p * 3; ++k) out[n++] = src[k];
  }
}

/// Hidden pre-activations for one patch: z = patch * W1 + b1.
template <typename T>
void hidden_layer(std::span<const T> patch, const BasicExtractorParams<T>& params, std::span<T> z) {
  const auto& s = params.shape();
  const auto w1 = params.w1();
  const auto b1 = params.b1();
  std::copy(b1.begin(), b1.end(), z.begin());
  for (std::size_t i = 0; i < s.input_dim(); ++i) {
    const T x = patch[i];
    const T* row = w1.data() + i * s.hidden;
    for (std::size_t h = 0; h < s.hidden; ++h) z[h] += x * row[h];
  }
}

}  // namespace detail

/// Output is (H/p) x (W/p) x embed. Deterministic, no internal state.
template <typename T>
BasicFeatureMap<T> extract(const Tensor<T>& image, const BasicExtractorParams<T>& params) {
  const auto& s = params.shape();
  detail::check_extract_input(image.dims(), s.patch);
  const std::size_t gh = image.dims()[0] / s.patch, gw = image.dims()[1] / s.patch;
  BasicFeatureMap<T> out(gh, gw, s.embed);
  std::vector<T> patch(s.input_dim()), z(s.hidden);
  const auto w2 = params.w2();
  const auto b2 = params.b2();
  for (std::size_t cy = 0; cy < gh; ++cy)
    for (std::size_t cx = 0; cx < gw; ++cx) {
      detail::gather_patch(image, cy, cx, s.patch, std::span<T>(patch));
      detail::hidden_layer<T>(patch, params, z);
      auto f = out.cell(cy, cx);
      std::copy(b2.begin(), b2.end(), f.begin());
      for (std::size_t h = 0; h < s.hidden; ++h) {
        const T a = z[h] > T(0) ? z[h] : T(0);
        if (a == T(0)) continue;
        const T* row = w2.data() + h * s.embed;
        for (std::size_t e = 0; e < s.embed; ++e) f[e] += a * row[e];
      }
    }
  return out;
}

/// Parameter gradients of <upstream, extract(image, params)>. The ReLU
/// derivative at exactly 0 is taken as 0.
template <typename T>
BasicExtractorParams<T> extract_backward(const Tensor<T>& image, const BasicExtractorParams<T>& params,
                                         const BasicFeatureMap<T>& upstream) {
  const auto& s = params.shape();
  detail::check_extract_input(image.dims(), s.patch);
  const std::size_t gh = image.dims()[0] / s.patch, gw = image.dims()[1] / s.patch;
  if (upstream.height() != gh || upstream.width() != gw || upstream.channels() != s.embed)
    throw DimensionError("upstream gradient does not match extractor output");

  BasicExtractorParams<T> grads(s);
  auto gw1 = grads.w1();
  auto gb1 = grads.b1();
  auto gw2 = grads.w2();
  auto gb2 = grads.b2();
  const auto w2 = params.w2();
  std::vector<T> patch(s.input_dim()), z(s.hidden), dz(s.hidden);

  for (std::size_t cy = 0; cy < gh; ++cy)
    for (std::size_t cx = 0; cx < gw; ++cx) {
      const auto g = upstream.cell(cy, cx);
      if (std::all_of(g.begin(), g.end(), [](T v) { return v == T(0); })) continue;
      detail::gather_patch(image, cy, cx, s.patch, std::span<T>(patch));
      detail::hidden_layer<T>(patch, params, z);
      for (std::size_t e = 0; e < s.embed; ++e) gb2[e] += g[e];
      for (std::size_t h = 0; h < s.hidden; ++h) {
        const bool active = z[h] > T(0);
        const T a = active ? z[h] : T(0);
        T* gw2row = gw2.data() + h * s.embed;
        const T* w2row = w2.data() + h * s.embed;
        T back = T(0);
        for (std::size_t e = 0; e < s.embed; ++e) {
          gw2row[e] += a * g[e];
          back += w2row[e] * g[e];
        }
        dz[h] = active ? back : T(0);
      }
      for (std::size_t h = 0; h < s.hidden; ++h) gb1[h] += dz[h];
      for (std::size_t i = 0; i < s.input_dim(); ++i) {
        const T x = patch[i];
        if (x == T(0)) continue;
        T* row = gw1.data() + i * s.hidden;
        for (std::size_t h = 0; h < s.hidden; ++h) row[h] += x * dz[h];
      }
    }
  return grads;
}

// ---------------------------------------------------------------------------
// Adam with bias correction.

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<double> m;
  std::vector<double> v;

  AdamState() = default;
  AdamState(std::size_t size, double learning_rate) : lr(learning_rate), m(size, 0.0), v(size, 0.0) {}
};

/// One update in place. Moments are kept in double.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState& state) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam: parameter, gradient and moment sizes differ");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    const double delta = state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    if (delta != 0.0) params[i] = static_cast<T>(static_cast<double>(params[i]) - delta);
  }
}

inline void adam_step(ExtractorParams& params, const ExtractorGrads& grads, AdamState& state) {
  if (!(params.shape() == grads.shape())) throw DimensionError("adam: gradient shape differs from parameters");
  adam_step<float>(params.values(), grads.values(), state);
}

}  // namespace focal
