#pragma once

#include <algorithm>
#include <vector>

#include "focal/error.hpp"
#include "focal/tensor.hpp"

namespace focal {

struct FusionSpec {
  /// L2-normalize each source's rows (after resizing) before concatenation.
  bool normalize = true;
};

namespace detail {

template <typename T>
BasicFeatureMap<T> align_source(const BasicFeatureMap<T>& f, std::size_t h, std::size_t w, bool normalize) {
  auto resized = resize_bilinear(f, h, w);
  if (!normalize) return resized;
  return unflatten_features(l2_normalize_rows(flatten_features(resized)), h, w);
}

}  // namespace detail

/// Channel concatenation (a first, then b) at the larger of the two
/// resolutions along each axis; the smaller map is resized bilinearly.
template <typename T>
BasicFeatureMap<T> fuse(const BasicFeatureMap<T>& a, const BasicFeatureMap<T>& b, const FusionSpec& spec = {}) {
  const std::size_t h = std::max(a.height(), b.height());
  const std::size_t w = std::max(a.width(), b.width());
  const auto fa = detail::align_source(a, h, w, spec.normalize);
  const auto fb = detail::align_source(b, h, w, spec.normalize);
  BasicFeatureMap<T> out(h, w, a.channels() + b.channels());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto dst = out.cell(y, x);
      auto sa = fa.cell(y, x);
      auto sb = fb.cell(y, x);
      std::copy(sa.begin(), sa.end(), dst.begin());
      std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.size()));
    }
  return out;
}

/// Left-to-right pairwise fusion of two or more maps.
template <typename T>
BasicFeatureMap<T> fuse_all(const std::vector<BasicFeatureMap<T>>& maps, const FusionSpec& spec = {}) {
  if (maps.size() < 2) throw DimensionError("fusion needs at least two feature maps");
  auto acc = fuse(maps[0], maps[1], spec);
  for (std::size_t i = 2; i < maps.size(); ++i) acc = fuse(acc, maps[i], spec);
  return acc;
}

}  // namespace focal
