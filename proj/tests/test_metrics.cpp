#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "focal/metrics.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace focal;
using testing_support::random_mask;

namespace {

ForgeryMask mask(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) { return ForgeryMask(h, w, std::move(v)); }

ForgeryMask complement(const ForgeryMask& m) {
  std::vector<std::uint8_t> v(m.values().begin(), m.values().end());
  for (auto& x : v) x = 1 - x;
  return ForgeryMask(m.height(), m.width(), v);
}

}  // namespace

TEST(Metrics, HandExample) {
  const auto y = mask(1, 4, {1, 1, 0, 0});
  const auto p = mask(1, 4, {1, 0, 0, 0});
  const auto c = confusion(p, y);
  EXPECT_EQ(c.forged, (ClassCounts{1, 0, 1}));
  EXPECT_EQ(c.pristine, (ClassCounts{2, 1, 0}));
  EXPECT_DOUBLE_EQ(macro_f1(p, y), 11.0 / 15.0);
  EXPECT_DOUBLE_EQ(iou(p, y), 0.5);
}

TEST(Metrics, IdentityAndComplement) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto y = random_mask(9, 11, seed, 0.4);
    EXPECT_EQ(macro_f1(y, y), 1.0);
    EXPECT_EQ(iou(y, y), 1.0);
    if (y.forged_count() > 0 && y.forged_count() < y.size()) {
      EXPECT_EQ(macro_f1(complement(y), y), 0.0);
      EXPECT_EQ(iou(complement(y), y), 0.0);
    }
  }
}

TEST(Metrics, DegenerateMasks) {
  const ForgeryMask clean(4, 4), all(4, 4, 1);
  EXPECT_EQ(macro_f1(clean, clean), 1.0);
  EXPECT_EQ(iou(clean, clean), 1.0);
  EXPECT_EQ(macro_f1(all, clean), 0.0);
  EXPECT_EQ(iou(all, clean), 0.0);
  EXPECT_EQ(macro_f1(all, all), 1.0);
}

TEST(Metrics, MatchesRecountOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t h = 1 + rng.below(40), w = 1 + rng.below(40);
    const auto p = random_mask(h, w, seed * 2, rng.uniform());
    const auto y = random_mask(h, w, seed * 2 + 1, rng.uniform());
    const auto want = oracle::recount(p, y);
    EXPECT_NEAR(macro_f1(p, y), want.f1, 1e-12);
    EXPECT_NEAR(iou(p, y), want.iou, 1e-12);
  }
}

TEST(Metrics, PropertyCountsAndDiceJaccard) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto p = random_mask(13, 17, seed, 0.3), y = random_mask(13, 17, seed + 99, 0.5);
    const auto c = confusion(p, y);
    EXPECT_EQ(c.forged.tp + c.forged.fp + c.forged.fn + c.pristine.tp, p.size());
    EXPECT_EQ(c.forged.fp, c.pristine.fn);
    EXPECT_EQ(c.forged.fn, c.pristine.fp);
    const double j = iou(p, y), d = class_f1(c.forged);
    EXPECT_NEAR(d, 2 * j / (1 + j), 1e-12);
    EXPECT_GE(macro_f1(p, y), 0.0);
    EXPECT_LE(macro_f1(p, y), 1.0);
  }
}

TEST(Metrics, PropertyPermutationInvariance) {
  Rng rng(3);
  const auto p = random_mask(10, 10, 1), y = random_mask(10, 10, 2);
  std::vector<std::size_t> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 99; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::uint8_t> pp(100), yy(100);
  for (std::size_t i = 0; i < 100; ++i) pp[i] = p[perm[i]], yy[i] = y[perm[i]];
  EXPECT_EQ(macro_f1(p, y), macro_f1(mask(10, 10, pp), mask(10, 10, yy)));
  EXPECT_EQ(iou(p, y), iou(mask(10, 10, pp), mask(10, 10, yy)));
}

TEST(Metrics, ShapeMismatch) {
  EXPECT_THROW(macro_f1(ForgeryMask(4, 4), ForgeryMask(4, 5)), DimensionError);
  EXPECT_THROW(iou(ForgeryMask(3, 4), ForgeryMask(4, 4)), DimensionError);
}

TEST(Metrics, ResizeNearest) {
  const auto m = mask(2, 2, {1, 0, 0, 1});
  const auto up = resize_mask_nearest(m, 4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(up.at(y, x), (y < 2) == (x < 2) ? 1 : 0);
  EXPECT_EQ(resize_mask_nearest(up, 2, 2), m);
}

TEST(EvaluateDataset, MeansAndCsv) {
  const auto y = mask(1, 4, {1, 1, 0, 0});
  const auto p = mask(1, 4, {1, 0, 0, 0});
  const auto r = evaluate_dataset({{"a", y, y}, {"b", p, y}});
  ASSERT_EQ(r.samples.size(), 2u);
  EXPECT_EQ(r.samples[0].sample_id, "a");
  EXPECT_DOUBLE_EQ(r.mean_f1, (1.0 + 11.0 / 15.0) / 2);
  EXPECT_DOUBLE_EQ(r.mean_iou, 0.75);
  const auto csv = r.to_csv();
  EXPECT_EQ(csv.rfind("sample_id,f1,iou\na,1,1\nb,", 0), 0u);
  EXPECT_NE(csv.find("\nmean,"), std::string::npos);
}

TEST(EvaluateDataset, Errors) {
  EXPECT_THROW(evaluate_dataset({}), DimensionError);
  try {
    evaluate_dataset({{"ok", ForgeryMask(2, 2), ForgeryMask(2, 2)}, {"s0007", ForgeryMask(2, 2), ForgeryMask(3, 2)}});
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("s0007"), std::string::npos);
  }
}
