#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "focal/error.hpp"

namespace focal {

inline constexpr std::size_t kMaxTensorRank = 4;

/// Dense row-major tensor with up to four positive extents.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> dims, T fill = T{})
      : dims_(std::move(dims)), data_(checked_size(dims_), fill) {}

  Tensor(std::vector<std::size_t> dims, std::vector<T> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (checked_size(dims_) != data_.size())
      throw DimensionError("tensor payload has " + std::to_string(data_.size()) + " values, extents need " +
                           std::to_string(checked_size(dims_)));
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  bool operator==(const Tensor&) const = default;

  static std::size_t checked_size(const std::vector<std::size_t>& dims) {
    if (dims.empty() || dims.size() > kMaxTensorRank)
      throw DimensionError("tensor rank must be in [1, 4], got " + std::to_string(dims.size()));
    std::size_t n = 1;
    for (auto d : dims) {
      if (d == 0) throw DimensionError("tensor extents must be positive");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

template <typename Range>
bool all_finite(const Range& values) {
  return std::all_of(std::begin(values), std::end(values), [](auto v) { return std::isfinite(v); });
}

/// Row-major rows x cols matrix. Feature rows of a flattened map live here.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T{}) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw DimensionError("matrix payload does not match rows x cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    std::transform(data_.begin(), data_.end(), out.values().begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using FeatureMatrix = Matrix<float>;

/// Dense height x width x channels embedding grid (channels fastest).
template <typename T>
class BasicFeatureMap {
 public:
  BasicFeatureMap() = default;
  BasicFeatureMap(std::size_t height, std::size_t width, std::size_t channels, T fill = T{})
      : height_(height), width_(width), channels_(channels), data_(checked(height, width, channels), fill) {}
  BasicFeatureMap(std::size_t height, std::size_t width, std::size_t channels, std::vector<T> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    if (data_.size() != checked(height, width, channels))
      throw DimensionError("feature map payload does not match its extents");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t cells() const noexcept { return height_ * width_; }

  std::span<T> cell(std::size_t y, std::size_t x) noexcept {
    return {data_.data() + (y * width_ + x) * channels_, channels_};
  }
  std::span<const T> cell(std::size_t y, std::size_t x) const noexcept {
    return {data_.data() + (y * width_ + x) * channels_, channels_};
  }
  T& at(std::size_t y, std::size_t x, std::size_t c) noexcept { return data_[(y * width_ + x) * channels_ + c]; }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * width_ + x) * channels_ + c];
  }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  bool operator==(const BasicFeatureMap&) const = default;

 private:
  static std::size_t checked(std::size_t h, std::size_t w, std::size_t c) {
    if (h == 0 || w == 0 || c == 0) throw DimensionError("feature map extents must be >= 1");
    return h * w * c;
  }

  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<T> data_;
};

using FeatureMap = BasicFeatureMap<float>;

/// Binary per-cell forgery labels: 0 = pristine, 1 = forged.
class ForgeryMask {
 public:
  static constexpr std::uint8_t kPristine = 0;
  static constexpr std::uint8_t kForged = 1;

  ForgeryMask() = default;
  ForgeryMask(std::size_t height, std::size_t width, std::uint8_t fill = kPristine)
      : height_(height), width_(width), data_(height * width, fill) {
    if (height == 0 || width == 0) throw DimensionError("mask extents must be >= 1");
    if (fill > 1) throw DimensionError("mask values must be 0 or 1");
  }
  ForgeryMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (height == 0 || width == 0) throw DimensionError("mask extents must be >= 1");
    if (data_.size() != height * width) throw DimensionError("mask payload does not match its extents");
    if (std::any_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v > 1; }))
      throw DimensionError("mask values must be 0 or 1");
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t at(std::size_t y, std::size_t x) const noexcept { return data_[y * width_ + x]; }
  void set(std::size_t y, std::size_t x, bool forged) noexcept { data_[y * width_ + x] = forged ? 1 : 0; }
  std::uint8_t operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<const std::uint8_t> values() const noexcept { return data_; }

  std::size_t forged_count() const noexcept {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), kForged));
  }
  double forged_fraction() const noexcept {
    return data_.empty() ? 0.0 : static_cast<double>(forged_count()) / static_cast<double>(data_.size());
  }

  bool operator==(const ForgeryMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

// ---------------------------------------------------------------------------
// Conversions between the typed grids and plain tensors.

template <typename T>
Tensor<T> to_tensor(const BasicFeatureMap<T>& f) {
  return Tensor<T>({f.height(), f.width(), f.channels()}, std::vector<T>(f.values().begin(), f.values().end()));
}

template <typename T>
BasicFeatureMap<T> feature_map_from_tensor(const Tensor<T>& t) {
  if (t.rank() != 3) throw DimensionError("feature map tensors must have rank 3 [H, W, C]");
  return BasicFeatureMap<T>(t.dims()[0], t.dims()[1], t.dims()[2],
                            std::vector<T>(t.values().begin(), t.values().end()));
}

// ---------------------------------------------------------------------------
// Flattening: row r of the matrix is cell (r / W, r % W).

template <typename T>
Matrix<T> flatten_features(const BasicFeatureMap<T>& f) {
  return Matrix<T>(f.cells(), f.channels(), std::vector<T>(f.values().begin(), f.values().end()));
}

template <typename T>
BasicFeatureMap<T> unflatten_features(const Matrix<T>& m, std::size_t height, std::size_t width) {
  if (m.rows() != height * width) throw DimensionError("matrix rows do not match height x width");
  return BasicFeatureMap<T>(height, width, m.cols(), std::vector<T>(m.values().begin(), m.values().end()));
}

/// Every `stride`-th cell along both axes, raster order. Row count is
/// ceil(H/stride) * ceil(W/stride).
template <typename T>
Matrix<T> flatten_strided(const BasicFeatureMap<T>& f, std::size_t stride) {
  if (stride == 0) throw DimensionError("stride must be >= 1");
  if (stride == 1) return flatten_features(f);
  const std::size_t gh = (f.height() + stride - 1) / stride;
  const std::size_t gw = (f.width() + stride - 1) / stride;
  Matrix<T> out(gh * gw, f.channels());
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      auto src = f.cell(gy * stride, gx * stride);
      std::copy(src.begin(), src.end(), out.row(gy * gw + gx).begin());
    }
  return out;
}

// ---------------------------------------------------------------------------
// Row normalization. Norms are accumulated in double.

inline constexpr double kNormEps = 1e-12;

template <typename T>
double row_norm(std::span<const T> row) {
  double s = 0.0;
  for (T v : row) s += static_cast<double>(v) * static_cast<double>(v);
  return std::sqrt(s);
}

/// Divides each row by max(||row||, eps).
template <typename T>
Matrix<T> l2_normalize_rows(Matrix<T> m, double eps = kNormEps) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    const double denom = std::max(row_norm<T>(row), eps);
    for (auto& v : row) v = static_cast<T>(static_cast<double>(v) / denom);
  }
  return m;
}

/// Vector-Jacobian product of l2_normalize_rows: given the input rows and the
/// gradient with respect to the normalized rows, returns the input gradient.
template <typename T>
Matrix<T> l2_normalize_rows_backward(const Matrix<T>& input, const Matrix<T>& grad_out, double eps = kNormEps) {
  if (input.rows() != grad_out.rows() || input.cols() != grad_out.cols())
    throw DimensionError("normalization gradient shape mismatch");
  Matrix<T> grad_in(input.rows(), input.cols());
  for (std::size_t r = 0; r < input.rows(); ++r) {
    auto x = input.row(r);
    auto g = grad_out.row(r);
    auto out = grad_in.row(r);
    const double n = row_norm<T>(x);
    if (n < eps) {
      for (std::size_t c = 0; c < x.size(); ++c) out[c] = static_cast<T>(static_cast<double>(g[c]) / eps);
      continue;
    }
    double yg = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) yg += static_cast<double>(x[c]) / n * static_cast<double>(g[c]);
    for (std::size_t c = 0; c < x.size(); ++c)
      out[c] = static_cast<T>((static_cast<double>(g[c]) - static_cast<double>(x[c]) / n * yg) / n);
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Bilinear resize, half-pixel centers, border clamping.

namespace detail {

struct LerpTap {
  std::size_t lo;
  std::size_t hi;
  double frac;
};

inline std::vector<LerpTap> lerp_taps(std::size_t src, std::size_t dst) {
  std::vector<LerpTap> taps(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  const double max_coord = static_cast<double>(src - 1);
  for (std::size_t i = 0; i < dst; ++i) {
    const double s = std::clamp((static_cast<double>(i) + 0.5) * scale - 0.5, 0.0, max_coord);
    const auto lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, src - 1);
    taps[i] = {lo, hi, s - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

template <typename T>
BasicFeatureMap<T> resize_bilinear(const BasicFeatureMap<T>& f, std::size_t target_height, std::size_t target_width) {
  if (target_height == 0 || target_width == 0) throw DimensionError("resize target must be >= 1");
  if (target_height == f.height() && target_width == f.width()) return f;
  const auto ty = detail::lerp_taps(f.height(), target_height);
  const auto tx = detail::lerp_taps(f.width(), target_width);
  BasicFeatureMap<T> out(target_height, target_width, f.channels());
  for (std::size_t y = 0; y < target_height; ++y) {
    const auto& a = ty[y];
    for (std::size_t x = 0; x < target_width; ++x) {
      const auto& b = tx[x];
      auto p00 = f.cell(a.lo, b.lo), p01 = f.cell(a.lo, b.hi);
      auto p10 = f.cell(a.hi, b.lo), p11 = f.cell(a.hi, b.hi);
      auto dst = out.cell(y, x);
      for (std::size_t c = 0; c < f.channels(); ++c) {
        const double top = p00[c] + (static_cast<double>(p01[c]) - p00[c]) * b.frac;
        const double bottom = p10[c] + (static_cast<double>(p11[c]) - p10[c]) * b.frac;
        dst[c] = static_cast<T>(top + (bottom - top) * a.frac);
      }
    }
  }
  return out;
}

}  // namespace focal
