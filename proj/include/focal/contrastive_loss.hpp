#pragma once

// Pixel-level contrastive objectives over one image's feature rows.
//
// Pristine rows (mask 0) form the positive pool; every selected pristine row
// acts as a query q, the remaining J pristine rows are its positive keys, and
// the K forged rows are negative keys. Per query:
//
//   L(q) = -log( (1/J) sum_j exp(q.k+_j / tau) / sum_i exp(q.k-_i / tau) )
//
// with the denominator over negatives only. The per-image loss is the mean
// over queries; the per-batch loss is the mean over images, each image
// evaluated on its own.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "focal/error.hpp"
#include "focal/random.hpp"
#include "focal/tensor.hpp"

namespace focal {

struct LossConfig {
  double tau = 0.07;
  /// Cap on queries per image; std::nullopt uses every pristine row.
  std::optional<std::size_t> query_subsample = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ConfigError("tau must be a positive finite number");
    if (query_subsample && *query_subsample < 1) throw ConfigError("query_subsample must be >= 1");
  }
};

enum class LossVariant {
  kImageByImage,  // mean of per-image InfoNCE++
  kBatchMerged,   // one InfoNCE++ over the pooled rows of the whole batch
  kVanilla,       // per-image single-positive InfoNCE
};

template <typename T>
struct Dictionary {
  Matrix<T> positives;  // pristine rows, raster order
  Matrix<T> negatives;  // forged rows, raster order
  std::vector<std::size_t> positive_index;
  std::vector<std::size_t> negative_index;
};

template <typename T>
Dictionary<T> build_dictionary(const Matrix<T>& features, const ForgeryMask& mask) {
  if (features.rows() != mask.size())
    throw DimensionError("feature rows (" + std::to_string(features.rows()) + ") != mask cells (" +
                         std::to_string(mask.size()) + ")");
  Dictionary<T> d;
  for (std::size_t r = 0; r < mask.size(); ++r)
    (mask[r] ? d.negative_index : d.positive_index).push_back(r);
  auto gather = [&](const std::vector<std::size_t>& idx) {
    Matrix<T> m(idx.size(), features.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto src = features.row(idx[i]);
      std::copy(src.begin(), src.end(), m.row(i).begin());
    }
    return m;
  };
  d.positives = gather(d.positive_index);
  d.negatives = gather(d.negative_index);
  return d;
}

/// Flatten, L2-normalize and partition one image's features.
template <typename T>
Dictionary<T> image_dictionary(const BasicFeatureMap<T>& f, const ForgeryMask& mask) {
  if (f.height() != mask.height() || f.width() != mask.width())
    throw DimensionError("feature map and mask extents differ");
  return build_dictionary(l2_normalize_rows(flatten_features(f)), mask);
}

inline bool loss_defined(std::size_t positives, std::size_t negatives) noexcept {
  return negatives >= 1 && positives >= 2;
}

/// Loss value and gradients with respect to the dictionary rows.
template <typename T>
struct DictionaryGrad {
  double loss = 0.0;
  Matrix<T> positives;
  Matrix<T> negatives;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// In-place softmax; returns log-sum-exp of the input.
inline double softmax_inplace(std::span<double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  const double inv = 1.0 / s;
  for (double& x : v) x *= inv;
  return m + std::log(s);
}

/// Four interleaved partial sums combined in a fixed order: vectorizes
/// without reassociation flags and stays bit-reproducible.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    for (std::size_t l = 0; l < 4; ++l) s[l] += a[i + l] * b[i + l];
  for (; i < n; ++i) s[0] += a[i] * b[i];
  return (s[0] + s[1]) + (s[2] + s[3]);
}

template <typename T>
std::vector<double> to_double(const Matrix<T>& m) {
  return std::vector<double>(m.values().begin(), m.values().end());
}

inline std::vector<std::size_t> select_queries(std::size_t pool, const LossConfig& cfg) {
  if (cfg.query_subsample && *cfg.query_subsample < pool) {
    Rng rng(derive_seed(cfg.seed, 1));
    return rng.sample_without_replacement(pool, *cfg.query_subsample);
  }
  std::vector<std::size_t> all(pool);
  for (std::size_t i = 0; i < pool; ++i) all[i] = i;
  return all;
}

inline void require_defined(std::size_t positives, std::size_t negatives) {
  if (negatives == 0) throw UndefinedLoss("dictionary has no negative (forged) rows");
  if (positives < 2) throw UndefinedLoss("dictionary needs a query and at least one positive key");
}

/// Shared evaluation of InfoNCE++ (multi-positive numerator, negative-only
/// denominator) and vanilla InfoNCE (one sampled positive, softmax over it
/// and the negatives). Gradient buffers are only touched when non-null.
template <typename T>
double contrastive_kernel(const Dictionary<T>& d, const LossConfig& cfg, bool vanilla, std::vector<double>* gpos,
                          std::vector<double>* gneg) {
  cfg.validate();
  const std::size_t P = d.positives.rows();
  const std::size_t K = d.negatives.rows();
  const std::size_t C = d.positives.cols();
  require_defined(P, K);
  if (d.negatives.cols() != C) throw DimensionError("positive and negative rows differ in width");

  const auto queries = select_queries(P, cfg);
  const double inv_tau = 1.0 / cfg.tau;
  const double inv_q = 1.0 / static_cast<double>(queries.size());
  const double log_j = std::log(static_cast<double>(P - 1));
  Rng key_rng(derive_seed(cfg.seed, 2));

  const auto pos = to_double(d.positives);
  const auto neg = to_double(d.negatives);
  auto prow = [&](std::size_t j) { return pos.data() + j * C; };
  auto nrow = [&](std::size_t i) { return neg.data() + i * C; };

  std::vector<double> pos_logits(P - 1), neg_logits(K), logits(K + 1);
  std::vector<std::size_t> pos_ids(P - 1);
  std::vector<double> gq(C);
  double total = 0.0;

  // Adds w * k to gq and w * q to the key's gradient row.
  auto accumulate = [&](double w, const double* q, const double* k, double* gk) {
    for (std::size_t c = 0; c < C; ++c) {
      gq[c] += w * k[c];
      gk[c] += w * q[c];
    }
  };

  for (std::size_t qi : queries) {
    const double* q = prow(qi);
    std::size_t n = 0;
    for (std::size_t j = 0; j < P; ++j) {
      if (j == qi) continue;
      pos_ids[n] = j;
      pos_logits[n++] = dot(q, prow(j), C) * inv_tau;
    }
    for (std::size_t i = 0; i < K; ++i) neg_logits[i] = dot(q, nrow(i), C) * inv_tau;

    if (!vanilla) {
      const bool grad = gpos != nullptr;
      const double lse_pos = grad ? softmax_inplace(pos_logits) : log_sum_exp(pos_logits);
      const double lse_neg = grad ? softmax_inplace(neg_logits) : log_sum_exp(neg_logits);
      total += -(lse_pos - log_j) + lse_neg;
      if (!grad) continue;
      // dL/ds+_j = -w+_j, dL/ds-_i = w-_i, with s = q.k / tau.
      std::fill(gq.begin(), gq.end(), 0.0);
      for (std::size_t m = 0; m < P - 1; ++m)
        accumulate(-pos_logits[m] * inv_tau * inv_q, q, prow(pos_ids[m]), gpos->data() + pos_ids[m] * C);
      for (std::size_t i = 0; i < K; ++i)
        accumulate(neg_logits[i] * inv_tau * inv_q, q, nrow(i), gneg->data() + i * C);
    } else {
      const std::size_t pick = static_cast<std::size_t>(key_rng.below(P - 1));
      logits[0] = pos_logits[pick];
      std::copy(neg_logits.begin(), neg_logits.end(), logits.begin() + 1);
      const double lse = gpos ? softmax_inplace(logits) : log_sum_exp(logits);
      total += lse - pos_logits[pick];
      if (!gpos) continue;
      // dL/ds+ = p0 - 1, dL/ds-_i = p_i.
      std::fill(gq.begin(), gq.end(), 0.0);
      accumulate((logits[0] - 1.0) * inv_tau * inv_q, q, prow(pos_ids[pick]), gpos->data() + pos_ids[pick] * C);
      for (std::size_t i = 0; i < K; ++i)
        accumulate(logits[i + 1] * inv_tau * inv_q, q, nrow(i), gneg->data() + i * C);
    }
    double* gqrow = gpos->data() + qi * C;
    for (std::size_t c = 0; c < C; ++c) gqrow[c] += gq[c];
  }
  const double loss = total * inv_q;
  if (!std::isfinite(loss)) throw NumericError("contrastive loss is not finite");
  return loss;
}

template <typename T>
DictionaryGrad<T> kernel_with_grad(const Dictionary<T>& d, const LossConfig& cfg, bool vanilla) {
  const std::size_t C = d.positives.cols();
  std::vector<double> gpos(d.positives.rows() * C, 0.0), gneg(d.negatives.rows() * C, 0.0);
  DictionaryGrad<T> out;
  out.loss = contrastive_kernel(d, cfg, vanilla, &gpos, &gneg);
  out.positives = Matrix<T>(d.positives.rows(), C);
  out.negatives = Matrix<T>(d.negatives.rows(), C);
  std::transform(gpos.begin(), gpos.end(), out.positives.values().begin(), [](double v) { return T(v); });
  std::transform(gneg.begin(), gneg.end(), out.negatives.values().begin(), [](double v) { return T(v); });
  return out;
}

}  // namespace detail

/// InfoNCE++ for one query given its logits s = q.k / tau. Exposed for
/// closed-form checks; the dictionary functions below use the same algebra.
inline double info_nce_pp_logits(std::span<const double> positive_logits, std::span<const double> negative_logits) {
  detail::require_defined(positive_logits.size() + 1, negative_logits.size());
  const double log_j = std::log(static_cast<double>(positive_logits.size()));
  return -(detail::log_sum_exp(positive_logits) - log_j) + detail::log_sum_exp(negative_logits);
}

/// Mean InfoNCE++ over the selected queries. Throws UndefinedLoss when K == 0
/// or fewer than two pristine rows exist.
template <typename T>
double info_nce_pp(const Dictionary<T>& d, const LossConfig& cfg) {
  return detail::contrastive_kernel<T>(d, cfg, false, nullptr, nullptr);
}

template <typename T>
DictionaryGrad<T> info_nce_pp_grad(const Dictionary<T>& d, const LossConfig& cfg) {
  return detail::kernel_with_grad(d, cfg, false);
}

/// Single-positive InfoNCE: per query one seeded-random positive key, softmax
/// over that key and all negatives.
template <typename T>
double info_nce_vanilla(const Dictionary<T>& d, const LossConfig& cfg) {
  return detail::contrastive_kernel<T>(d, cfg, true, nullptr, nullptr);
}

template <typename T>
DictionaryGrad<T> info_nce_vanilla_grad(const Dictionary<T>& d, const LossConfig& cfg) {
  return detail::kernel_with_grad(d, cfg, true);
}

// ---------------------------------------------------------------------------
// Batch-level objectives.

template <typename T>
struct LabeledFeatures {
  BasicFeatureMap<T> features;
  ForgeryMask mask;
};

/// Image b of a batch draws its queries from seed + b * golden-ratio, so a
/// single-image batch reproduces info_nce_pp with the caller's seed.
inline LossConfig image_loss_config(const LossConfig& cfg, std::size_t image) {
  LossConfig c = cfg;
  c.seed = cfg.seed + static_cast<std::uint64_t>(image) * 0x9E3779B97F4A7C15ULL;
  return c;
}

template <typename T>
struct BatchLossGrad {
  double loss = 0.0;
  /// Gradient with respect to each image's raw (unnormalized) feature map.
  std::vector<BasicFeatureMap<T>> grads;
};

namespace detail {

template <typename T>
void scatter_rows(const Matrix<T>& rows, const std::vector<std::size_t>& index, Matrix<T>& into,
                  std::size_t offset = 0) {
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = rows.row(offset + i);
    std::copy(src.begin(), src.end(), into.row(index[i]).begin());
  }
}

template <typename T>
void check_batch(const std::vector<LabeledFeatures<T>>& batch) {
  if (batch.empty()) throw DimensionError("batch must not be empty");
  for (const auto& item : batch)
    if (item.features.height() != item.mask.height() || item.features.width() != item.mask.width())
      throw DimensionError("feature map and mask extents differ within batch");
}

template <typename T>
Dictionary<T> merge_dictionaries(const std::vector<Dictionary<T>>& dicts) {
  std::size_t P = 0, K = 0, C = dicts.front().positives.cols();
  for (const auto& d : dicts) {
    P += d.positives.rows();
    K += d.negatives.rows();
  }
  Dictionary<T> merged{Matrix<T>(P, C), Matrix<T>(K, C), {}, {}};
  std::size_t p = 0, k = 0;
  for (const auto& d : dicts) {
    std::copy(d.positives.values().begin(), d.positives.values().end(), merged.positives.values().begin() + p * C);
    std::copy(d.negatives.values().begin(), d.negatives.values().end(), merged.negatives.values().begin() + k * C);
    p += d.positives.rows();
    k += d.negatives.rows();
  }
  return merged;
}

}  // namespace detail

/// Mean over images of the per-image InfoNCE++ (images with undefined loss
/// contribute 0 and still count in the mean). Accumulated in image order.
template <typename T>
double overall_loss(const std::vector<LabeledFeatures<T>>& batch, const LossConfig& cfg) {
  detail::check_batch(batch);
  double sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto d = image_dictionary(batch[b].features, batch[b].mask);
    if (!loss_defined(d.positives.rows(), d.negatives.rows())) continue;
    sum += info_nce_pp(d, image_loss_config(cfg, b));
  }
  return sum / static_cast<double>(batch.size());
}

/// InfoNCE++ over all pristine rows of the batch pooled together against all
/// forged rows pooled together.
template <typename T>
double overall_loss_batchmerged(const std::vector<LabeledFeatures<T>>& batch, const LossConfig& cfg) {
  detail::check_batch(batch);
  std::vector<Dictionary<T>> dicts;
  for (const auto& item : batch) dicts.push_back(image_dictionary(item.features, item.mask));
  return info_nce_pp(detail::merge_dictionaries(dicts), cfg);
}

/// Loss and gradients for the selected objective, chained through the row
/// normalization back to each raw feature map.
template <typename T>
BatchLossGrad<T> batch_loss_grad(const std::vector<LabeledFeatures<T>>& batch, const LossConfig& cfg,
                                 LossVariant variant) {
  detail::check_batch(batch);
  const std::size_t B = batch.size();
  std::vector<Matrix<T>> raw(B), normalized(B), grad_rows(B);
  std::vector<Dictionary<T>> dicts(B);
  for (std::size_t b = 0; b < B; ++b) {
    raw[b] = flatten_features(batch[b].features);
    normalized[b] = l2_normalize_rows(raw[b]);
    dicts[b] = build_dictionary(normalized[b], batch[b].mask);
    grad_rows[b] = Matrix<T>(raw[b].rows(), raw[b].cols());
  }

  BatchLossGrad<T> out;
  if (variant == LossVariant::kBatchMerged) {
    const auto merged = detail::merge_dictionaries(dicts);
    const auto g = info_nce_pp_grad(merged, cfg);
    out.loss = g.loss;
    std::size_t p = 0, k = 0;
    for (std::size_t b = 0; b < B; ++b) {
      detail::scatter_rows(g.positives, dicts[b].positive_index, grad_rows[b], p);
      detail::scatter_rows(g.negatives, dicts[b].negative_index, grad_rows[b], k);
      p += dicts[b].positive_index.size();
      k += dicts[b].negative_index.size();
    }
  } else {
    const T inv_b = T(1) / static_cast<T>(B);
    double sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto& d = dicts[b];
      if (!loss_defined(d.positives.rows(), d.negatives.rows())) continue;
      const auto c = image_loss_config(cfg, b);
      auto g = variant == LossVariant::kVanilla ? info_nce_vanilla_grad(d, c) : info_nce_pp_grad(d, c);
      sum += g.loss;
      for (auto& v : g.positives.values()) v *= inv_b;
      for (auto& v : g.negatives.values()) v *= inv_b;
      detail::scatter_rows(g.positives, d.positive_index, grad_rows[b]);
      detail::scatter_rows(g.negatives, d.negative_index, grad_rows[b]);
    }
    out.loss = sum / static_cast<double>(B);
  }

  out.grads.reserve(B);
  for (std::size_t b = 0; b < B; ++b)
    out.grads.push_back(unflatten_features(l2_normalize_rows_backward(raw[b], grad_rows[b]),
                                           batch[b].features.height(), batch[b].features.width()));
  return out;
}

}  // namespace focal
