#pragma once

// Pixel-level evaluation of binary forgery masks: per-class confusion counts,
// macro-averaged F1 over {pristine, forged}, and forged-class IoU.

#include <cstdint>
#include <string>
#include <vector>

#include "focal/error.hpp"
#include "focal/io.hpp"
#include "focal/tensor.hpp"

namespace focal {

struct ClassCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  bool operator==(const ClassCounts&) const = default;
};

struct ConfusionCounts {
  ClassCounts pristine;
  ClassCounts forged;
};

inline void require_same_extents(const ForgeryMask& p, const ForgeryMask& y) {
  if (p.height() != y.height() || p.width() != y.width())
    throw DimensionError("prediction is " + std::to_string(p.height()) + "x" + std::to_string(p.width()) +
                         ", ground truth is " + std::to_string(y.height()) + "x" + std::to_string(y.width()));
}

inline ConfusionCounts confusion(const ForgeryMask& p, const ForgeryMask& y) {
  require_same_extents(p, y);
  std::uint64_t both_forged = 0, both_pristine = 0, false_forged = 0, missed_forged = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pf = p[i] != 0, yf = y[i] != 0;
    if (pf && yf) ++both_forged;
    else if (!pf && !yf) ++both_pristine;
    else if (pf) ++false_forged;
    else ++missed_forged;
  }
  ConfusionCounts c;
  c.forged = {both_forged, false_forged, missed_forged};
  c.pristine = {both_pristine, missed_forged, false_forged};
  return c;
}

/// 2TP / (2TP + FP + FN); a class absent from both masks scores 1.
inline double class_f1(const ClassCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  if (denom == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

inline double macro_f1(const ForgeryMask& p, const ForgeryMask& y) {
  const auto c = confusion(p, y);
  return 0.5 * (class_f1(c.pristine) + class_f1(c.forged));
}

/// |forged(p) & forged(y)| / |forged(p) | forged(y)|; 1 when both are all-pristine.
inline double iou(const ForgeryMask& p, const ForgeryMask& y) {
  const auto c = confusion(p, y).forged;
  const auto uni = c.tp + c.fp + c.fn;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.tp) / static_cast<double>(uni);
}

/// Nearest-neighbour upsampling (or downsampling) of a mask to new extents.
inline ForgeryMask resize_mask_nearest(const ForgeryMask& m, std::size_t height, std::size_t width) {
  if (m.height() == height && m.width() == width) return m;
  ForgeryMask out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      out.set(y, x, m.at(y * m.height() / height, x * m.width() / width) != 0);
  return out;
}

struct SampleScore {
  std::string sample_id;
  double f1 = 0.0;
  double iou = 0.0;
};

struct EvaluationReport {
  std::vector<SampleScore> samples;
  double mean_f1 = 0.0;
  double mean_iou = 0.0;

  std::string to_csv() const {
    std::string out = "sample_id,f1,iou\n";
    for (const auto& s : samples) out += s.sample_id + "," + format_number(s.f1) + "," + format_number(s.iou) + "\n";
    out += "mean," + format_number(mean_f1) + "," + format_number(mean_iou) + "\n";
    return out;
  }
};

struct EvaluationPair {
  std::string sample_id;
  ForgeryMask prediction;
  ForgeryMask truth;
};

/// Per-sample and mean scores in input order. A shape mismatch names the
/// offending sample.
inline EvaluationReport evaluate_dataset(const std::vector<EvaluationPair>& pairs) {
  if (pairs.empty()) throw DimensionError("evaluation needs at least one (prediction, truth) pair");
  EvaluationReport r;
  double sf = 0.0, si = 0.0;
  for (const auto& pair : pairs) {
    try {
      require_same_extents(pair.prediction, pair.truth);
    } catch (const DimensionError& e) {
      throw DimensionError("sample '" + pair.sample_id + "': " + e.what());
    }
    SampleScore s{pair.sample_id, macro_f1(pair.prediction, pair.truth), iou(pair.prediction, pair.truth)};
    sf += s.f1;
    si += s.iou;
    r.samples.push_back(std::move(s));
  }
  r.mean_f1 = sf / static_cast<double>(pairs.size());
  r.mean_iou = si / static_cast<double>(pairs.size());
  return r;
}

}  // namespace focal
