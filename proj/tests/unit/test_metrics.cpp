#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "mtadv/metrics.hpp"
#include "mtadv/rng.hpp"

using namespace mtadv;

namespace {

nn::Mat<double> random_similarity(Rng& rng, int rows, int cols) {
  nn::Mat<double> m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = std::round(rng.uniform(-1, 1) * 8) / 8;  // forces ties
  return m;
}

double miou_set_oracle(const std::vector<int>& pred, const std::vector<int>& gt) {
  double sum = 0;
  int n = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::set<std::size_t> p, g;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c) p.insert(i);
      if (gt[i] == c) g.insert(i);
    }
    std::vector<std::size_t> inter, uni;
    std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(inter));
    std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(uni));
    if (uni.empty()) continue;
    sum += static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    ++n;
  }
  return sum / n;
}

}  // namespace

TEST(RecallAt1, SingleImageSingleCaption) {
  nn::Mat<double> m(1, 1);
  m(0, 0) = 0.3;
  const std::vector<int> correct = {0};
  EXPECT_EQ(recall_at_1(m, correct), 1.0);
}

TEST(RecallAt1, ConstructedMiss) {
  nn::Mat<double> m(1, 2);
  m(0, 0) = 0.0;  // orthogonal correct caption
  m(0, 1) = 1.0;  // identical distractor
  const std::vector<int> correct = {0};
  EXPECT_EQ(recall_at_1(m, correct), 0.0);
}

TEST(RecallAt1, AgreesWithBruteForceArgmax) {
  Rng rng(31);
  const auto m = random_similarity(rng, 100, 17);
  std::vector<int> correct(100);
  for (auto& c : correct) c = static_cast<int>(rng.below(17));
  int hits = 0;
  for (int r = 0; r < 100; ++r) {
    int best = 0;
    double bv = m(r, 0);
    for (int c = 0; c < 17; ++c)
      if (m(r, c) > bv) bv = m(r, c), best = c;
    hits += best == correct[r];
  }
  EXPECT_EQ(recall_at_1(m, correct), hits / 100.0);
}

TEST(RecallAt1, TiesGoToLowestIndex) {
  nn::Mat<double> m(1, 3);
  m << 0.5, 0.5, 0.5;
  EXPECT_EQ(top1_from_similarity(m)[0], 0);
}

TEST(RecallAt1, InvariantToMonotoneTransform) {
  Rng rng(32);
  const auto m = random_similarity(rng, 50, 9);
  std::vector<int> correct(50);
  for (auto& c : correct) c = static_cast<int>(rng.below(9));
  const nn::Mat<double> t = m.unaryExpr([](double v) { return std::exp(3 * v) - 2; });
  EXPECT_EQ(recall_at_1(m, correct), recall_at_1(t, correct));
}

TEST(RecallAt1, MismatchRejected) {
  nn::Mat<double> m(2, 3);
  m.setZero();
  const std::vector<int> one = {0};
  const std::vector<int> bad = {0, 3};
  EXPECT_THROW(recall_at_1(m, one), std::invalid_argument);
  EXPECT_THROW(recall_at_1(m, bad), std::invalid_argument);
}

TEST(Miou, PerfectPrediction) {
  const std::vector<int> gt = {0, 1, 1, 2, 0, 9};
  EXPECT_EQ(miou(gt, gt), 1.0);
}

TEST(Miou, DisjointSingleClass) {
  const std::vector<int> pred = {3, 3, 0, 0}, gt = {0, 0, 3, 3};
  EXPECT_EQ(miou(pred, gt), 0.0);
}

TEST(Miou, MatchesSetArithmeticOracle) {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> pred(400), gt(400);
    for (auto& v : pred) v = static_cast<int>(rng.below(kNumClasses));
    for (auto& v : gt) v = static_cast<int>(rng.below(4));
    EXPECT_EQ(miou(pred, gt), miou_set_oracle(pred, gt));
  }
}

TEST(Miou, InvariantToConsistentRelabeling) {
  Rng rng(34);
  std::vector<int> perm(kNumClasses);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = kNumClasses - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<int> pred(300), gt(300);
  for (auto& v : pred) v = static_cast<int>(rng.below(kNumClasses));
  for (auto& v : gt) v = static_cast<int>(rng.below(kNumClasses));
  std::vector<int> pp(300), gg(300);
  for (int i = 0; i < 300; ++i) pp[i] = perm[pred[i]], gg[i] = perm[gt[i]];
  EXPECT_NEAR(miou(pred, gt), miou(pp, gg), 1e-12);
}

TEST(Miou, ShapeMismatchRejected) {
  const std::vector<int> a = {0, 1}, b = {0};
  EXPECT_THROW(miou(a, b), std::invalid_argument);
}

TEST(CellMap, PerfectPredictions) {
  const std::vector<CellLabel> gts = {{1, 2}, {0, 0}, {1, 5}, {1, 2}};
  const std::vector<CellPrediction> preds = {{0.9, 2}, {0.0, 1}, {0.8, 5}, {0.7, 2}};
  EXPECT_DOUBLE_EQ(cell_map(preds, gts), 1.0);
}

TEST(CellMap, AllObjectnessZero) {
  const std::vector<CellLabel> gts = {{1, 2}, {1, 3}};
  const std::vector<CellPrediction> preds = {{0.0, 2}, {0.0, 3}};
  EXPECT_EQ(cell_map(preds, gts), 0.0);
}

TEST(CellMap, ThreeCellEnumeration) {
  // One class (4). Ranked detections: cell 0 (0.9, miss), cell 2 (0.6, hit),
  // cell 1 (0.3, hit). PR points: (0, 0), (0.5, 0.5), (1, 2/3); all-points
  // interpolated AP = 0.5 * 2/3 + 0.5 * 2/3 = 2/3.
  const std::vector<CellLabel> gts = {{0, 0}, {1, 4}, {1, 4}};
  const std::vector<CellPrediction> preds = {{0.9, 4}, {0.3, 4}, {0.6, 4}};
  EXPECT_NEAR(cell_map(preds, gts), 2.0 / 3.0, 1e-15);
}

TEST(CellMap, InvariantToConsistentRelabeling) {
  Rng rng(35);
  std::vector<CellLabel> gts(72);
  std::vector<CellPrediction> preds(72);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const int c = static_cast<int>(rng.below(kNumClasses));
    gts[i] = {c > 0 ? 1 : 0, c};
    preds[i] = {rng.uniform01(), 1 + static_cast<int>(rng.below(kNumForeground))};
  }
  std::vector<int> perm(kNumClasses);
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = kNumClasses - 1; i > 1; --i) std::swap(perm[i], perm[1 + rng.below(i)]);
  auto g2 = gts;
  auto p2 = preds;
  for (auto& g : g2) g.class_id = perm[g.class_id];
  for (auto& p : p2) p.class_id = perm[p.class_id];
  EXPECT_NEAR(cell_map(preds, gts), cell_map(p2, g2), 1e-12);
}

TEST(CellMap, GridMismatchRejected) {
  const std::vector<CellLabel> gts = {{1, 2}};
  const std::vector<CellPrediction> preds = {{0.5, 2}, {0.5, 2}};
  EXPECT_THROW(cell_map(preds, gts), std::invalid_argument);
}

TEST(Asr, ReferenceCellsRoundToOneDecimal) {
  EXPECT_EQ(round_decimal(asr(24.0, 5.1), 1), 78.8);
  EXPECT_EQ(round_decimal(asr(46.24, 0.24), 1), 99.5);
}

TEST(Asr, IdentityAndTotalCollapse) {
  for (double x : {0.01, 0.5, 24.0, 100.0}) {
    EXPECT_EQ(asr(x, x), 0.0);
    EXPECT_EQ(asr(x, 0.0), 100.0);
  }
}

TEST(Asr, UndefinedForNonPositiveBefore) {
  EXPECT_THROW(asr(0.0, 0.0), UndefinedAsr);
  EXPECT_THROW(asr(-1.0, 0.0), UndefinedAsr);
}

TEST(RoundDecimal, HalfAwayFromZeroAfterSnapping) {
  EXPECT_EQ(round_decimal(78.75, 1), 78.8);
  EXPECT_EQ(round_decimal(78.74999999999, 1), 78.8);
  EXPECT_EQ(round_decimal(-0.05, 1), -0.1);
  EXPECT_EQ(round_decimal(0.125, 2), 0.13);
}
