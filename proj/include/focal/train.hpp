#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "focal/clustering.hpp"
#include "focal/contrastive_loss.hpp"
#include "focal/extractor.hpp"
#include "focal/io.hpp"
#include "focal/metrics.hpp"
#include "focal/parallel.hpp"
#include "focal/synthetic.hpp"

namespace focal {

struct TrainConfig {
  ExtractorShape shape;
  std::size_t steps = 2000;
  std::size_t batch_size = 4;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  LossVariant variant = LossVariant::kImageByImage;
  LossConfig loss;

  void validate() const {
    shape.validate();
    loss.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (lr < 0.0 || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
  }
};

/// One row per optimizer step, evaluated on that step's batch before the
/// update: the image-by-image and the batch-merged loss values.
struct CurvePoint {
  std::size_t step = 0;
  double loss_image_by_image = 0.0;
  double loss_batch_merged = 0.0;
};

inline std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,loss_image_by_image,loss_batch_merged\n";
  for (const auto& p : curve)
    out += std::to_string(p.step) + "," + format_number(p.loss_image_by_image) + "," +
           format_number(p.loss_batch_merged) + "\n";
  return out;
}

struct TrainResult {
  ExtractorParams params;
  std::vector<CurvePoint> curve;
};

/// Sample order for training: groups (conflict pairs, or single samples) are
/// shuffled per epoch and kept contiguous, so a pair lands in the same batch
/// whenever the batch size allows it.
class BatchStream {
 public:
  BatchStream(const std::vector<SyntheticSample>& data, std::uint64_t seed) : seed_(seed) {
    if (data.empty()) throw ConfigError("training set is empty");
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (data[i].pair_id >= 0 && i > 0 && data[i - 1].pair_id == data[i].pair_id) {
        groups_.back().push_back(i);
      } else {
        groups_.push_back({i});
      }
    }
  }

  std::vector<std::size_t> next(std::size_t count) {
    std::vector<std::size_t> out;
    while (out.size() < count) {
      if (pos_ == order_.size()) refill();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void refill() {
    std::vector<std::size_t> g(groups_.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = i;
    Rng rng(derive_seed(seed_, 0x5EED0000ULL + epoch_++));
    rng.shuffle(g.begin(), g.end());
    order_.clear();
    for (auto gi : g) order_.insert(order_.end(), groups_[gi].begin(), groups_[gi].end());
    pos_ = 0;
  }

  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::vector<std::size_t>> groups_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

namespace detail {

inline double batch_merged_value(const std::vector<LabeledFeatures<float>>& batch, const LossConfig& cfg) {
  try {
    return overall_loss_batchmerged(batch, cfg);
  } catch (const UndefinedLoss&) {
    return 0.0;
  }
}

}  // namespace detail

/// Seeded mini-batch Adam on the selected contrastive objective. Per-image
/// work may run in parallel; reductions happen in batch order, so the result
/// does not depend on FOCAL_THREADS.
inline TrainResult train(const TrainConfig& cfg, const std::vector<SyntheticSample>& data,
                         const ExtractorParams* init = nullptr) {
  cfg.validate();
  TrainResult result;
  result.params = init ? *init : init_extractor(cfg.shape, derive_seed(cfg.seed, 0xA11CE));
  if (!(result.params.shape() == cfg.shape)) throw ConfigError("initial parameters do not match the configured shape");
  AdamState adam(result.params.values().size(), cfg.lr);
  BatchStream stream(data, derive_seed(cfg.seed, 0xBA7C4));
  result.curve.reserve(cfg.steps);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const auto ids = stream.next(cfg.batch_size);
    std::vector<LabeledFeatures<float>> batch(ids.size());
    parallel_for(ids.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b)
        batch[b] = {extract(data[ids[b]].image, result.params), data[ids[b]].mask};
    });

    LossConfig lc = cfg.loss;
    lc.seed = derive_seed(cfg.seed, step);
    BatchLossGrad<float> g;
    try {
      g = batch_loss_grad(batch, lc, cfg.variant);
    } catch (const UndefinedLoss&) {
      // Pooled batch without negatives: nothing to learn from this step.
      g.loss = 0.0;
      for (const auto& item : batch)
        g.grads.emplace_back(item.features.height(), item.features.width(), item.features.channels());
    }

    CurvePoint point{step, 0.0, 0.0};
    point.loss_image_by_image = cfg.variant == LossVariant::kImageByImage ? g.loss : overall_loss(batch, lc);
    point.loss_batch_merged =
        cfg.variant == LossVariant::kBatchMerged ? g.loss : detail::batch_merged_value(batch, lc);
    result.curve.push_back(point);

    std::vector<ExtractorGrads> per_image(ids.size());
    parallel_for(ids.size(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b)
        per_image[b] = extract_backward(data[ids[b]].image, result.params, g.grads[b]);
    });
    ExtractorGrads total(cfg.shape);
    for (const auto& gi : per_image)
      for (std::size_t i = 0; i < total.values().size(); ++i) total.values()[i] += gi.values()[i];
    if (!all_finite(total.values())) throw NumericError("non-finite gradient at step " + std::to_string(step));
    adam_step(result.params, total, adam);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation helpers shared by the CLI and the acceptance suite.

struct ExtractorScore {
  EvaluationReport report;
  /// Fraction of cells predicted forged whose truth is pristine.
  double false_alarm_rate = 0.0;
};

inline ExtractorScore score_masks(const std::vector<ForgeryMask>& predictions, const std::vector<SyntheticSample>& data) {
  std::vector<EvaluationPair> pairs;
  std::uint64_t false_alarms = 0, pristine_cells = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto c = confusion(predictions[i], data[i].mask);
    false_alarms += c.forged.fp;
    pristine_cells += c.pristine.tp + c.pristine.fn;
    pairs.push_back({std::to_string(i), predictions[i], data[i].mask});
  }
  ExtractorScore s;
  s.report = evaluate_dataset(pairs);
  s.false_alarm_rate = pristine_cells ? static_cast<double>(false_alarms) / static_cast<double>(pristine_cells) : 0.0;
  return s;
}

inline std::vector<FeatureMap> extract_all(const ExtractorParams& params, const std::vector<SyntheticSample>& data) {
  std::vector<FeatureMap> out(data.size());
  parallel_for(data.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = extract(data[i].image, params);
  });
  return out;
}

inline std::vector<ForgeryMask> predict_all(const std::vector<FeatureMap>& features, const ClusterParams& params,
                                            ClusterAlgo algo) {
  std::vector<ForgeryMask> out(features.size());
  parallel_for(features.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = predict_mask(features[i], params, algo);
  });
  return out;
}

inline ExtractorScore evaluate_extractor(const ExtractorParams& params, const std::vector<SyntheticSample>& data,
                                         const ClusterParams& cluster, ClusterAlgo algo = ClusterAlgo::kHdbscan) {
  return score_masks(predict_all(extract_all(params, data), cluster, algo), data);
}

}  // namespace focal
