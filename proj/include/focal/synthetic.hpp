#pragma once

// Synthetic splicing forgeries. Every "source" is a smooth random colour
// texture plus a fixed per-source high-frequency fingerprint (a p x p x 3
// pattern tiled over the image, standing in for camera/compression traces).
// A forgery pastes a region of a donor source into a host at the same pixel
// coordinates, so the pasted pixels are bit-identical to the donor's.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "focal/error.hpp"
#include "focal/random.hpp"
#include "focal/tensor.hpp"

namespace focal {

struct SynthConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t patch = 4;
  double min_fraction = 0.05;
  double max_fraction = 0.4;
  double fingerprint_amplitude = 0.08;
  double content_amplitude = 0.15;
  /// 0: every source draws its own fingerprint. n > 0: sources pick one of n
  /// fixed fingerprints ("cameras") generated from fingerprint_seed, and a
  /// donor never shares the host's camera.
  std::size_t fingerprint_pool = 0;
  std::uint64_t fingerprint_seed = 0;
  /// Donor shows the host's scene (same content texture), so only the
  /// fingerprint tells the spliced region apart.
  bool same_scene = false;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  /// Emit (host-with-donor-patch, donor-source) pairs; `count` is the number of pairs.
  bool conflict_pair = false;
  /// Emit untouched single-source images with all-pristine masks.
  bool pristine = false;

  void validate() const {
    if (patch == 0 || height == 0 || width == 0) throw ConfigError("image and patch sizes must be >= 1");
    if (height % patch != 0 || width % patch != 0) throw ConfigError("image size must be divisible by patch size");
    if (!(min_fraction > 0.0 && max_fraction < 1.0 && min_fraction <= max_fraction))
      throw ConfigError("forged fraction range must satisfy 0 < min <= max < 1");
    if (fingerprint_amplitude < 0.0 || content_amplitude < 0.0) throw ConfigError("amplitudes must be >= 0");
    if (fingerprint_pool == 1 && !pristine) throw ConfigError("a fingerprint pool needs at least two cameras for forgeries");
    if (conflict_pair && pristine) throw ConfigError("conflict_pair and pristine are mutually exclusive");
    const std::size_t cells = (height / patch) * (width / patch);
    if (!pristine && std::ceil(min_fraction * static_cast<double>(cells)) > std::floor(max_fraction * cells))
      throw ConfigError("forged fraction range admits no whole number of feature cells");
  }
};

enum class SampleRole { kForged, kPairForged, kPairSource, kPristine };

inline const char* role_name(SampleRole r) {
  switch (r) {
    case SampleRole::kForged: return "forged";
    case SampleRole::kPairForged: return "pair_forged";
    case SampleRole::kPairSource: return "pair_source";
    case SampleRole::kPristine: return "pristine";
  }
  return "?";
}

struct SyntheticSample {
  Tensor<float> image;  // H x W x 3, values on the 8-bit grid k / 255
  ForgeryMask mask;     // feature resolution (H/p x W/p)
  std::uint64_t seed = 0;
  SampleRole role = SampleRole::kForged;
  long pair_id = -1;
};

/// Majority vote per p x p block; exactly half forged counts as pristine.
inline ForgeryMask downsample_mask_majority(const ForgeryMask& pixels, std::size_t patch) {
  if (patch == 0 || pixels.height() % patch != 0 || pixels.width() % patch != 0)
    throw DimensionError("mask extents must be divisible by the patch size");
  const std::size_t gh = pixels.height() / patch, gw = pixels.width() / patch;
  ForgeryMask out(gh, gw);
  for (std::size_t cy = 0; cy < gh; ++cy)
    for (std::size_t cx = 0; cx < gw; ++cx) {
      std::size_t forged = 0;
      for (std::size_t dy = 0; dy < patch; ++dy)
        for (std::size_t dx = 0; dx < patch; ++dx) forged += pixels.at(cy * patch + dy, cx * patch + dx);
      out.set(cy, cx, 2 * forged > patch * patch);
    }
  return out;
}

namespace detail {

struct Wave {
  double kx, ky, phase, amplitude;
};

struct SourceModel {
  double base[3];
  std::vector<Wave> waves[3];
  std::vector<double> fingerprint;  // p * p * 3
  std::size_t camera = 0;
};

inline std::vector<double> make_fingerprint(Rng& rng, const SynthConfig& cfg) {
  std::vector<double> f(cfg.patch * cfg.patch * 3);
  for (auto& v : f) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * cfg.fingerprint_amplitude;
  return f;
}

/// `avoid_camera` is only meaningful with a fingerprint pool.
inline SourceModel make_source(Rng& rng, const SynthConfig& cfg, std::size_t avoid_camera = SIZE_MAX) {
  SourceModel s;
  for (int c = 0; c < 3; ++c) {
    s.base[c] = rng.uniform(0.35, 0.65);
    for (int k = 0; k < 3; ++k) {
      const double wavelength = rng.uniform(12.0, 40.0);
      const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double freq = 2.0 * std::numbers::pi / wavelength;
      s.waves[c].push_back({freq * std::cos(angle), freq * std::sin(angle), rng.uniform(0.0, 2.0 * std::numbers::pi),
                            cfg.content_amplitude * rng.uniform(0.5, 1.0)});
    }
  }
  if (cfg.fingerprint_pool == 0) {
    s.fingerprint = make_fingerprint(rng, cfg);
    return s;
  }
  if (avoid_camera < cfg.fingerprint_pool) {
    s.camera = rng.below(cfg.fingerprint_pool - 1);
    if (s.camera >= avoid_camera) ++s.camera;
  } else {
    s.camera = rng.below(cfg.fingerprint_pool);
  }
  Rng camera_rng(derive_seed(cfg.fingerprint_seed, s.camera));
  s.fingerprint = make_fingerprint(camera_rng, cfg);
  return s;
}

inline Tensor<float> render_source(const SourceModel& s, const SynthConfig& cfg) {
  Tensor<float> img({cfg.height, cfg.width, 3});
  for (std::size_t y = 0; y < cfg.height; ++y)
    for (std::size_t x = 0; x < cfg.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double v = s.base[c];
        for (const auto& w : s.waves[c])
          v += w.amplitude * std::sin(w.kx * static_cast<double>(x) + w.ky * static_cast<double>(y) + w.phase);
        v += s.fingerprint[((y % cfg.patch) * cfg.patch + (x % cfg.patch)) * 3 + c];
        const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
        img[(y * cfg.width + x) * 3 + c] = static_cast<float>(q);
      }
  return img;
}

/// Rectangle or ellipse drawn on the feature-cell grid, area within the
/// configured fraction range.
inline ForgeryMask make_region(Rng& rng, const SynthConfig& cfg) {
  const std::size_t gh = cfg.height / cfg.patch, gw = cfg.width / cfg.patch;
  const double cells = static_cast<double>(gh * gw);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double target = rng.uniform(cfg.min_fraction, cfg.max_fraction) * cells;
    const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    ForgeryMask m(gh, gw);
    if (rng.uniform() < 0.5) {
      const auto h = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(std::sqrt(target * aspect))), 1, gh);
      const auto w = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(target / static_cast<double>(h))), 1, gw);
      const auto y0 = rng.below(gh - h + 1), x0 = rng.below(gw - w + 1);
      for (std::size_t y = y0; y < y0 + h; ++y)
        for (std::size_t x = x0; x < x0 + w; ++x) m.set(y, x, true);
    } else {
      const double ry = std::sqrt(target * aspect / std::numbers::pi);
      const double rx = target / (std::numbers::pi * ry);
      if (2 * ry > static_cast<double>(gh) || 2 * rx > static_cast<double>(gw)) continue;
      const double cy = rng.uniform(ry, static_cast<double>(gh) - ry);
      const double cx = rng.uniform(rx, static_cast<double>(gw) - rx);
      for (std::size_t y = 0; y < gh; ++y)
        for (std::size_t x = 0; x < gw; ++x) {
          const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
          const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) m.set(y, x, true);
        }
    }
    const double f = m.forged_fraction();
    if (f >= cfg.min_fraction && f <= cfg.max_fraction) return m;
  }
  throw ConfigError("could not place a forged region within the configured fraction range");
}

inline ForgeryMask upsample_cells(const ForgeryMask& cells, std::size_t patch) {
  ForgeryMask px(cells.height() * patch, cells.width() * patch);
  for (std::size_t y = 0; y < px.height(); ++y)
    for (std::size_t x = 0; x < px.width(); ++x) px.set(y, x, cells.at(y / patch, x / patch) != 0);
  return px;
}

inline Tensor<float> paste(const Tensor<float>& host, const Tensor<float>& donor, const ForgeryMask& pixel_mask) {
  Tensor<float> out = host;
  for (std::size_t i = 0; i < pixel_mask.size(); ++i)
    if (pixel_mask[i])
      for (std::size_t c = 0; c < 3; ++c) out[i * 3 + c] = donor[i * 3 + c];
  return out;
}

}  // namespace detail

/// Deterministic in cfg.seed: sample i uses the child seed derive_seed(seed, i).
inline std::vector<SyntheticSample> gen_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SyntheticSample> out;
  out.reserve(cfg.conflict_pair ? 2 * cfg.count : cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) {
    const std::uint64_t seed = derive_seed(cfg.seed, i);
    Rng rng(seed);
    const auto host = detail::make_source(rng, cfg);
    const auto host_img = detail::render_source(host, cfg);
    if (cfg.pristine) {
      out.push_back({host_img, ForgeryMask(cfg.height / cfg.patch, cfg.width / cfg.patch), seed,
                     SampleRole::kPristine, -1});
      continue;
    }
    auto donor = detail::make_source(rng, cfg, host.camera);
    if (cfg.same_scene) {
      std::copy(std::begin(host.base), std::end(host.base), std::begin(donor.base));
      for (int c = 0; c < 3; ++c) donor.waves[c] = host.waves[c];
    }
    const auto donor_img = detail::render_source(donor, cfg);
    const auto cells = detail::make_region(rng, cfg);
    const auto pixels = detail::upsample_cells(cells, cfg.patch);
    auto forged = detail::paste(host_img, donor_img, pixels);
    auto mask = downsample_mask_majority(pixels, cfg.patch);
    if (cfg.conflict_pair) {
      const long pair = static_cast<long>(i);
      out.push_back({std::move(forged), std::move(mask), seed, SampleRole::kPairForged, pair});
      out.push_back({donor_img, ForgeryMask(cells.height(), cells.width()), seed, SampleRole::kPairSource, pair});
    } else {
      out.push_back({std::move(forged), std::move(mask), seed, SampleRole::kForged, -1});
    }
  }
  return out;
}

}  // namespace focal
