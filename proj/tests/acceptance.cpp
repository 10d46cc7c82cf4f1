#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "focal/focal.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace focal;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

ClusterParams eval_cluster() {
  ClusterParams p;
  p.min_cluster_size = 10;
  p.min_samples = 4;
  return p;
}

SynthConfig forgery_corpus(std::uint64_t seed, std::size_t count) {
  SynthConfig s;
  s.seed = seed;
  s.count = count;
  return s;
}

TrainConfig train_config(std::uint64_t seed, LossVariant v, std::size_t steps) {
  TrainConfig t;
  t.seed = seed;
  t.variant = v;
  t.steps = steps;
  return t;
}

double variance(const std::vector<double>& v) {
  double m = 0.0, s = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

// Trained extractors are shared between criteria 5, 7, 8 and 9.
class ModelCache {
 public:
  const std::vector<SyntheticSample>& eval_set(std::uint64_t seed) {
    auto it = eval_.find(seed);
    if (it == eval_.end()) it = eval_.emplace(seed, gen_synthetic(forgery_corpus(derive_seed(seed, 1), 50))).first;
    return it->second;
  }

  const TrainResult& model(std::uint64_t seed, LossVariant v) {
    const auto key = std::make_pair(seed, static_cast<int>(v));
    auto it = models_.find(key);
    if (it != models_.end()) return it->second;
    const auto t0 = Clock::now();
    auto r = train(train_config(seed, v, 2000), gen_synthetic(forgery_corpus(seed, 200)));
    std::fprintf(stderr, "  trained %s extractor, seed %llu, in %.1f s\n", loss_name(v),
                 static_cast<unsigned long long>(seed), seconds_since(t0));
    train_seconds_[key] = seconds_since(t0);
    return models_.emplace(key, std::move(r)).first->second;
  }

  double train_seconds(std::uint64_t seed, LossVariant v) const {
    return train_seconds_.at(std::make_pair(seed, static_cast<int>(v)));
  }

 private:
  std::map<std::uint64_t, std::vector<SyntheticSample>> eval_;
  std::map<std::pair<std::uint64_t, int>, TrainResult> models_;
  std::map<std::pair<std::uint64_t, int>, double> train_seconds_;
};

ModelCache cache;

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst_loss = 0.0, worst_e2e = 0.0;
  std::size_t loss_cases = 0, e2e_cases = 0;
  for (std::uint64_t seed = 0; seed < 120; ++seed) {
    Rng rng(seed);
    const std::size_t P = 2 + rng.below(6), K = 1 + rng.below(5), C = 2 + rng.below(6);
    Dictionary<double> d;
    d.positives = l2_normalize_rows(testing_support::random_matrix<double>(P, C, seed * 3 + 1));
    d.negatives = l2_normalize_rows(testing_support::random_matrix<double>(K, C, seed * 3 + 2));
    LossConfig cfg;
    cfg.tau = rng.uniform(0.3, 2.0);
    cfg.query_subsample = std::nullopt;
    const auto g = info_nce_pp_grad(d, cfg);
    std::vector<double> x(d.positives.values().begin(), d.positives.values().end());
    x.insert(x.end(), d.negatives.values().begin(), d.negatives.values().end());
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& v) {
          auto e = d;
          std::copy(v.begin(), v.begin() + static_cast<long>(P * C), e.positives.values().begin());
          std::copy(v.begin() + static_cast<long>(P * C), v.end(), e.negatives.values().begin());
          return info_nce_pp(e, cfg);
        },
        x, 1e-4);
    std::vector<double> a(g.positives.values().begin(), g.positives.values().end());
    a.insert(a.end(), g.negatives.values().begin(), g.negatives.values().end());
    worst_loss = std::max(worst_loss, oracle::max_relative_error(a, fd));
    ++loss_cases;
  }
  const ExtractorShape shape{2, 6, 4};
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(seed + 500);
    Tensor<double> img({8, 8, 3});
    for (auto& v : img.values()) v = rng.uniform();
    auto mask = testing_support::random_mask(4, 4, seed, 0.3);
    mask.set(0, 0, true);
    mask.set(2, 2, false);
    mask.set(3, 3, false);
    auto p = init_extractor(shape, seed + 7).cast<double>();
    for (auto& v : p.values()) v += rng.normal(0.0, 0.1);
    LossConfig cfg;
    cfg.tau = 0.5;
    auto loss_at = [&](const BasicExtractorParams<double>& q) {
      std::vector<LabeledFeatures<double>> batch{{extract(img, q), mask}};
      return batch_loss_grad(batch, cfg, LossVariant::kImageByImage);
    };
    const auto g = loss_at(p);
    const auto analytic = extract_backward(img, p, g.grads[0]);
    const std::vector<double> x(p.values().begin(), p.values().end());
    const auto fd = oracle::central_difference(
        [&](const std::vector<double>& v) { return loss_at(BasicExtractorParams<double>(shape, v)).loss; }, x, 1e-6);
    const std::vector<double> a(analytic.values().begin(), analytic.values().end());
    worst_e2e = std::max(worst_e2e, oracle::max_relative_error(a, fd));
    ++e2e_cases;
  }
  const double secs = seconds_since(t0);
  return {worst_loss < 1e-4 && worst_e2e < 1e-3 && secs < 30.0,
          fmt("loss-level max rel err %.2e over %zu seeds, end-to-end %.2e over %zu seeds, %.1f s", worst_loss,
              loss_cases, worst_e2e, e2e_cases, secs)};
}

Outcome loss_values() {
  double worst_equal = 0.0;
  for (std::size_t K = 1; K <= 8; ++K) {
    Dictionary<double> d;
    d.positives = Matrix<double>(4, 3, 0.0);
    d.negatives = Matrix<double>(K, 3, 0.0);
    for (std::size_t r = 0; r < 4; ++r) d.positives(r, 1) = 1.0;
    for (std::size_t r = 0; r < K; ++r) d.negatives(r, 1) = 1.0;
    LossConfig cfg;
    cfg.tau = 0.7;
    worst_equal = std::max(worst_equal, std::abs(info_nce_pp(d, cfg) - std::log(static_cast<double>(K))));
  }
  const double pos[] = {1.0, 0.0}, neg[] = {0.0};
  const double hand = info_nce_pp_logits(pos, neg);
  const double exact = oracle::info_nce_pp({1.0, 0.0}, {0.0});
  const bool pass = worst_equal < 1e-12 && std::abs(hand - exact) < 1e-6 && std::abs(hand + 0.6201) < 5e-5;
  return {pass, fmt("equal logits |L - log K| <= %.1e for K=1..8, hand instance %.6f (oracle %.6f)", worst_equal,
                    hand, exact)};
}

Outcome clustering_oracle() {
  double worst = 1.0;
  std::size_t largest = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 900);
    const std::size_t blobs = 2 + rng.below(4);
    std::vector<std::size_t> sizes(blobs);
    std::size_t n = 0;
    for (auto& s : sizes) n += (s = 50 + rng.below(2000 / blobs - 50));
    Matrix<float> m(n, 2);
    std::size_t r = 0;
    for (std::size_t b = 0; b < blobs; ++b) {
      const double cx = rng.uniform(-10, 10), cy = rng.uniform(-10, 10), sd = rng.uniform(0.3, 1.5);
      for (std::size_t i = 0; i < sizes[b]; ++i, ++r) {
        m(r, 0) = static_cast<float>(rng.normal(cx, sd));
        m(r, 1) = static_cast<float>(rng.normal(cy, sd));
      }
    }
    const std::size_t mcs = 10 + rng.below(30), ms = 2 + rng.below(10);
    ClusterParams p;
    p.min_cluster_size = mcs;
    p.min_samples = ms;
    const auto got = hdbscan(m, p);
    const auto want = oracle::hdbscan(oracle::to_points(m), mcs, ms);
    worst = std::min(worst, oracle::label_agreement(got.labels, want));
    largest = std::max(largest, n);
  }
  std::size_t mst_cases = 0, mst_mismatch = 0;
  for (std::size_t n = 2; n <= 8; ++n)
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      Rng rng(seed * 17 + n);
      Matrix<float> m(n, 2);
      for (auto& v : m.values()) v = static_cast<float>(rng.below(30));
      const std::size_t k = 1 + rng.below(n - 1);
      const auto core = core_distances(m, k);
      const auto pts = oracle::to_points(m);
      const auto want = oracle::brute_force_mst_weights(oracle::mutual_reachability(pts, oracle::core_distances(pts, k)));
      std::vector<double> got;
      for (const auto& e : mst_mutual_reachability(m, core)) got.push_back(e.weight);
      std::sort(got.begin(), got.end());
      // Ascending summation on both sides.
      double got_total = 0.0, want_total = 0.0;
      for (double w : got) got_total += w;
      for (double w : want) want_total += w;
      ++mst_cases;
      if (got_total != want_total) ++mst_mismatch;
    }
  return {worst >= 0.95 && mst_mismatch == 0,
          fmt("min label agreement %.4f over 20 datasets (N <= %zu), MST totals exact on %zu/%zu cases (N <= 8)", worst,
              largest, mst_cases - mst_mismatch, mst_cases)};
}

Outcome scale_invariance() {
  std::size_t identical = 0, total = 0, forged_maps = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed + 3000);
    FeatureMap f(16, 16, 32);
    if (seed % 2 == 0) {
      f = testing_support::random_map(16, 16, 32, seed);
    } else {
      const std::size_t y0 = rng.below(8), x0 = rng.below(8), side = 4 + rng.below(6);
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
          const bool inside = y >= y0 && y < y0 + side && x >= x0 && x < x0 + side;
          auto cell = f.cell(y, x);
          for (auto& v : cell) v = static_cast<float>(rng.normal(0, 0.05));
          cell[inside ? 1 : 0] += 1.0f;
        }
    }
    const auto base = encode_mask(predict_mask(f, eval_cluster()));
    forged_maps += decode_mask(base).forged_count() > 0;
    for (float c : {0.1f, 3.0f, 7.3f}) {
      auto g = f;
      for (auto& v : g.values()) v *= c;
      identical += encode_mask(predict_mask(g, eval_cluster())) == base;
      ++total;
    }
  }
  return {identical == total,
          fmt("%zu/%zu scaled maps byte-identical (%zu of 50 base masks non-trivial)", identical, total, forged_maps)};
}

Outcome end_to_end() {
  const auto& m = cache.model(0, LossVariant::kImageByImage);
  const auto s = evaluate_extractor(m.params, cache.eval_set(0), eval_cluster());
  const double secs = cache.train_seconds(0, LossVariant::kImageByImage);
  return {s.report.mean_f1 >= 0.95 && s.report.mean_iou >= 0.85 && secs < 600.0,
          fmt("mean F1 %.4f, mean IoU %.4f on 50 held-out forgeries, training %.1f s", s.report.mean_f1,
              s.report.mean_iou, secs)};
}

Outcome image_vs_batch() {
  SynthConfig corpus;
  corpus.seed = 0;
  corpus.count = 50;
  corpus.conflict_pair = true;
  corpus.fingerprint_pool = 2;
  corpus.same_scene = true;
  SynthConfig held = corpus;
  held.conflict_pair = false;
  held.seed = derive_seed(0, 1);
  const auto train_set = gen_synthetic(corpus);
  const auto eval_set = gen_synthetic(held);
  const std::size_t steps = 300, tail = steps / 10;
  double f1[2], var[2];
  const LossVariant variants[] = {LossVariant::kImageByImage, LossVariant::kBatchMerged};
  for (int i = 0; i < 2; ++i) {
    const auto r = train(train_config(0, variants[i], steps), train_set);
    f1[i] = evaluate_extractor(r.params, eval_set, eval_cluster()).report.mean_f1;
    std::vector<double> own;
    for (std::size_t s = steps - tail; s < steps; ++s)
      own.push_back(i == 0 ? r.curve[s].loss_image_by_image : r.curve[s].loss_batch_merged);
    var[i] = variance(own);
  }
  return {f1[0] - f1[1] >= 0.05 && var[0] < var[1],
          fmt("held-out F1 image %.4f vs batch %.4f (gap %.4f); last-10%% loss variance %.3e vs %.3e", f1[0], f1[1],
              f1[0] - f1[1], var[0], var[1])};
}

Outcome pp_vs_vanilla() {
  double pp = 0.0, van = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto& e = cache.eval_set(seed);
    const double a = evaluate_extractor(cache.model(seed, LossVariant::kImageByImage).params, e, eval_cluster()).report.mean_f1;
    const double b = evaluate_extractor(cache.model(seed, LossVariant::kVanilla).params, e, eval_cluster()).report.mean_f1;
    pp += a / 3.0;
    van += b / 3.0;
    per_seed += fmt(" [%.3f/%.3f]", a, b);
  }
  return {pp >= van - 0.01, fmt("mean F1 InfoNCE++ %.4f vs vanilla %.4f; per seed%s", pp, van, per_seed.c_str())};
}

Outcome hdbscan_vs_kmeans() {
  const auto& params = cache.model(0, LossVariant::kImageByImage).params;
  const auto& forged = cache.eval_set(0);
  SynthConfig pc = forgery_corpus(derive_seed(0, 2), 50);
  pc.pristine = true;
  const auto pristine = gen_synthetic(pc);
  const auto hf = evaluate_extractor(params, forged, eval_cluster(), ClusterAlgo::kHdbscan);
  const auto kf = evaluate_extractor(params, forged, eval_cluster(), ClusterAlgo::kKmeans);
  const auto hp = evaluate_extractor(params, pristine, eval_cluster(), ClusterAlgo::kHdbscan);
  const auto kp = evaluate_extractor(params, pristine, eval_cluster(), ClusterAlgo::kKmeans);
  return {hf.report.mean_f1 >= kf.report.mean_f1 - 0.01 && hp.false_alarm_rate < kp.false_alarm_rate,
          fmt("forged F1 hdbscan %.4f vs kmeans %.4f; pristine false-alarm rate %.4f vs %.4f", hf.report.mean_f1,
              kf.report.mean_f1, hp.false_alarm_rate, kp.false_alarm_rate)};
}

Outcome fusion() {
  const auto& e = cache.eval_set(0);
  const auto& a = cache.model(0, LossVariant::kImageByImage).params;
  const auto& b = cache.model(1, LossVariant::kImageByImage).params;
  const auto fa = extract_all(a, e), fb = extract_all(b, e);
  std::vector<FeatureMap> fused(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) fused[i] = fuse(fa[i], fb[i]);
  const double sa = score_masks(predict_all(fa, eval_cluster(), ClusterAlgo::kHdbscan), e).report.mean_f1;
  const double sb = score_masks(predict_all(fb, eval_cluster(), ClusterAlgo::kHdbscan), e).report.mean_f1;
  const double sf = score_masks(predict_all(fused, eval_cluster(), ClusterAlgo::kHdbscan), e).report.mean_f1;
  const auto big = fuse(testing_support::random_map(128, 128, 512, 1), testing_support::random_map(256, 256, 256, 2));
  const bool shape = big.height() == 256 && big.width() == 256 && big.channels() == 768;
  return {sf >= std::max(sa, sb) - 0.02 && shape,
          fmt("fused F1 %.4f vs singles %.4f / %.4f; fixture shape %zux%zux%zu", sf, sa, sb, big.height(), big.width(),
              big.channels())};
}

Outcome metrics_oracle() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed + 77);
    const std::size_t h = 1 + rng.below(64), w = 1 + rng.below(64);
    const auto p = testing_support::random_mask(h, w, seed * 2, rng.uniform());
    const auto y = testing_support::random_mask(h, w, seed * 2 + 1, rng.uniform());
    const auto want = oracle::recount(p, y);
    worst = std::max({worst, std::abs(macro_f1(p, y) - want.f1), std::abs(iou(p, y) - want.iou)});
  }
  const ForgeryMask y(1, 4, std::vector<std::uint8_t>{1, 1, 0, 0}), p(1, 4, std::vector<std::uint8_t>{1, 0, 0, 0});
  const bool hand = std::abs(macro_f1(p, y) - 11.0 / 15.0) < 1e-12 && std::abs(iou(p, y) - 0.5) < 1e-12;
  const ForgeryMask clean(8, 8);
  const bool degenerate = macro_f1(clean, clean) == 1.0 && iou(clean, clean) == 1.0;
  return {worst <= 1e-12 && hand && degenerate,
          fmt("max deviation %.1e over 100 pairs; hand fixture %s; all-pristine pair %s", worst, hand ? "ok" : "wrong",
              degenerate ? "ok" : "wrong")};
}

Outcome performance() {
  Rng rng(11);
  const std::size_t n = 16384, dims = 32;
  Matrix<float> m(n, dims);
  std::vector<std::vector<double>> centres(4, std::vector<double>(dims));
  for (auto& c : centres)
    for (auto& v : c) v = rng.uniform(-3, 3);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& c = centres[r % 4 == 3 ? rng.below(4) : r % 3];
    for (std::size_t d = 0; d < dims; ++d) m(r, d) = static_cast<float>(c[d] + rng.normal(0, 1.0));
  }
  const ClusterParams p;
  setenv("FOCAL_THREADS", "1", 1);
  auto t0 = Clock::now();
  const auto single = hdbscan(m, p);
  const double t_single = seconds_since(t0);
  setenv("FOCAL_THREADS", "4", 1);
  t0 = Clock::now();
  const auto multi = hdbscan(m, p);
  const double t_multi = seconds_since(t0);
  unsetenv("FOCAL_THREADS");
  const bool same = single.labels == multi.labels;
  return {t_single < 10.0 && t_multi < 3.0 && same,
          fmt("16384x32: %.2f s with 1 thread, %.2f s with 4 threads, %d clusters, labels %s", t_single, t_multi,
              single.cluster_count, same ? "identical" : "differ")};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient fidelity", gradient_fidelity},
      {2, "loss values", loss_values},
      {3, "clustering oracle", clustering_oracle},
      {4, "scale invariance", scale_invariance},
      {5, "end-to-end synthetic localization", end_to_end},
      {6, "image-by-image vs batch-merged", image_vs_batch},
      {7, "InfoNCE++ vs vanilla InfoNCE", pp_vs_vanilla},
      {8, "HDBSCAN vs K-means", hdbscan_vs_kmeans},
      {9, "feature fusion", fusion},
      {10, "metrics oracle", metrics_oracle},
      {11, "clustering performance", performance},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.contains(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
