#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mtadv/perturbation.hpp"

using namespace mtadv;

namespace {

constexpr double kE = 1.0 / 255.0;

BasicImage<double> random_image(Shape s, Rng& rng, double lo, double hi) {
  BasicImage<double> im(s);
  for (auto& v : im) v = rng.uniform(lo, hi);
  return im;
}

Perturbation<double> as_delta(BasicImage<double> d, double budget, StageTag tag) {
  return Perturbation<double>{std::move(d), budget, tag};
}

}  // namespace

TEST(ProjectLinf, InteriorPointUnchanged) {
  Perturbation<double> p = Perturbation<double>::zero({4, 4, 3}, StageTag::task);
  const auto out = project_linf(p, 8 * kE);
  EXPECT_EQ(out.delta, p.delta);
  EXPECT_EQ(out.budget, 8 * kE);
}

TEST(ProjectLinf, ClipsToBoundary) {
  BasicImage<double> d({1, 1, 1}, 0.10);
  const auto out = project_linf(as_delta(d, 1.0, StageTag::task), 8 * kE);
  EXPECT_DOUBLE_EQ(out.delta[0], 8 * kE);
}

TEST(ProjectLinf, MatchesElementwiseOracle) {
  Rng rng(11);
  const double eps = 6 * kE;
  for (int trial = 0; trial < 20; ++trial) {
    const auto d = random_image({8, 8, 3}, rng, -1.0, 1.0);
    const auto out = project_linf(as_delta(d, 1.0, StageTag::task), eps);
    for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(out.delta[i], std::min(std::max(d[i], -eps), eps));
    EXPECT_LE(linf_norm(out.delta), eps);
  }
}

TEST(ProjectLinf, IdempotentAndNonExpansive) {
  Rng rng(12);
  const double eps = 4 * kE;
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_image({5, 5, 3}, rng, -0.1, 0.1);
    const auto b = random_image({5, 5, 3}, rng, -0.1, 0.1);
    const auto pa = project_linf(as_delta(a, 1.0, StageTag::task), eps);
    const auto pb = project_linf(as_delta(b, 1.0, StageTag::task), eps);
    EXPECT_EQ(project_linf(pa, eps).delta, pa.delta);
    EXPECT_LE(linf_distance(pa.delta, pb.delta), linf_distance(a, b));
  }
}

TEST(ProjectLinf, NegativeEpsRejected) {
  EXPECT_THROW(project_linf(Perturbation<double>::zero({1, 1, 1}, StageTag::task), -1e-3), std::invalid_argument);
}

TEST(PgdStep, ZeroGradientDoesNotMove) {
  Rng rng(3);
  const auto x0 = random_image({4, 4, 3}, rng, 0.2, 0.8);
  BasicImage<double> xt = x0;
  for (std::size_t i = 0; i < xt.size(); ++i) xt[i] += (i % 2 ? 1 : -1) * 3 * kE;
  const BasicImage<double> g(x0.shape(), 0.0);
  EXPECT_EQ(pgd_step(xt, g, 2 * kE, x0, 8 * kE), xt);
}

TEST(PgdStep, SignArithmetic) {
  const BasicImage<double> x({3, 3, 3}, 0.5), g({3, 3, 3}, 0.7);
  const auto out = pgd_step(x, g, 2 * kE, x, 8 * kE);
  for (double v : out) EXPECT_EQ(v, 0.5 + 2 * kE);
}

TEST(PgdStep, SaturatesAfterFourSteps) {
  const BasicImage<double> x0({3, 3, 3}, 0.5), g({3, 3, 3}, 1.0);
  BasicImage<double> x = x0;
  for (int t = 0; t < 10; ++t) {
    x = pgd_step(x, g, 2 * kE, x0, 8 * kE);
    if (t == 2)
      for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i] - x0[i], 6 * kE, 1e-15);
  }
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i] - x0[i], 8 * kE, 1e-15);
}

TEST(PgdStep, ShapeMismatchRejected) {
  const BasicImage<double> x({3, 3, 3}, 0.5), g({3, 3, 1}, 1.0);
  EXPECT_THROW(pgd_step(x, g, kE, x, kE), std::invalid_argument);
}

TEST(PgdStep, StaysFeasibleAtRangeEdges) {
  BasicImage<double> x({2, 2, 3}, 0.0);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = 1.0;
  BasicImage<double> g(x.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = i % 2 ? -1.0 : 1.0;
  const auto out = pgd_step(x, g, 2 * kE, x, 8 * kE);
  EXPECT_TRUE(out.is_feasible());
  EXPECT_EQ(out, x);
}

TEST(SplitBudget, CanonicalRatio) {
  const auto s = split_budget(8 * kE, 3.0);
  EXPECT_NEAR(s.eps_task, 6 * kE, 1e-15);
  EXPECT_NEAR(s.eps_clip, 2 * kE, 1e-15);
  EXPECT_EQ(s.eps_task + s.eps_clip, s.eps_total);
}

TEST(SplitBudget, SixSplitTwoToOne) {
  const auto s = split_budget(6 * kE, 2.0);
  EXPECT_NEAR(s.eps_task, 4 * kE, 1e-15);
  EXPECT_NEAR(s.eps_clip, 2 * kE, 1e-15);
}

TEST(SplitBudget, ZeroTotal) {
  const auto s = split_budget(0.0, 3.0);
  EXPECT_EQ(s.eps_task, 0.0);
  EXPECT_EQ(s.eps_clip, 0.0);
}

TEST(SplitBudget, InvalidLambdaRejected) {
  EXPECT_THROW(split_budget(8 * kE, 0.0), std::invalid_argument);
  EXPECT_THROW(split_budget(8 * kE, -1.0), std::invalid_argument);
  EXPECT_THROW(split_budget(-kE, 1.0), std::invalid_argument);
}

TEST(SplitBudget, FromPartsWithZeroClipHasInfiniteLambda) {
  const auto s = BudgetSplit::from_parts(8 * kE, 0.0);
  EXPECT_TRUE(std::isinf(s.lambda));
  EXPECT_EQ(s.eps_total, 8 * kE);
}

TEST(Compose, ZeroClipIsIdentity) {
  Rng rng(5);
  const auto x = random_image({6, 6, 3}, rng, 0.1, 0.9);
  const auto t = project_linf(as_delta(random_image(x.shape(), rng, -1, 1), 1.0, StageTag::task), 6 * kE);
  const auto c = compose_perturbations(t, Perturbation<double>::zero(x.shape(), StageTag::clip), x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i] + c.delta.delta[i], x[i] + t.delta[i]);
}

TEST(Compose, SaturatedPixelsAdd) {
  const BasicImage<double> x({1, 1, 1}, 0.5);
  const auto c = compose_perturbations(as_delta(BasicImage<double>({1, 1, 1}, 6 * kE), 6 * kE, StageTag::task),
                                       as_delta(BasicImage<double>({1, 1, 1}, 2 * kE), 2 * kE, StageTag::clip), x);
  EXPECT_NEAR(c.delta.delta[0], 8 * kE, 1e-15);
}

TEST(Compose, RandomPairsStayWithinTotalBudget) {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto x = random_image({2, 2, 3}, rng, 0.0, 1.0);
    const auto t = project_linf(as_delta(random_image(x.shape(), rng, -1, 1), 1, StageTag::task), 6 * kE);
    const auto k = project_linf(as_delta(random_image(x.shape(), rng, -1, 1), 1, StageTag::clip), 2 * kE);
    const auto c = compose_perturbations(t, k, x);
    ASSERT_LE(linf_norm(c.delta.delta), 8 * kE + 1e-9);
    ASSERT_TRUE(c.adversarial.is_feasible());
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(x[i] + c.delta.delta[i], c.adversarial[i]);
  }
}

TEST(Compose, ShapeMismatchRejected) {
  const BasicImage<double> x({2, 2, 3}, 0.5);
  EXPECT_THROW(compose_perturbations(Perturbation<double>::zero({2, 2, 3}, StageTag::task),
                                     Perturbation<double>::zero({2, 2, 1}, StageTag::clip), x),
               std::invalid_argument);
}

TEST(ExactOffset, ReconstructsTargetBitExactly) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto base = random_image({4, 4, 3}, rng, 0.0, 1.0);
    auto target = random_image(base.shape(), rng, 0.0, 1.0);
    const auto d = exact_offset(base, target);
    for (std::size_t i = 0; i < base.size(); ++i) ASSERT_EQ(base[i] + d[i], target[i]);
  }
}

TEST(PgdAscent, ZeroBudgetReturnsClean) {
  const BasicImage<double> x({3, 3, 3}, 0.4);
  GradOracle<double> f = [](const BasicImage<double>& im, bool) {
    return LossGrad<double>{im[0] * 2.0, BasicImage<double>(im.shape(), 1.0)};
  };
  const auto o = pgd_ascent(f, x, 0.0, PgdConfig{});
  EXPECT_EQ(o.adversarial, x);
  EXPECT_EQ(linf_norm(o.delta.delta), 0.0);
  EXPECT_EQ(o.final_loss, o.initial_loss);
}

TEST(PgdAscent, SeparableQuadraticSaturatesAwayFromTarget) {
  Rng rng(9);
  const auto x = random_image({4, 4, 3}, rng, 0.3, 0.7);
  BasicImage<double> star(x.shape());
  for (std::size_t i = 0; i < star.size(); ++i) star[i] = i % 3 ? 5.0 : -5.0;
  GradOracle<double> f = [&](const BasicImage<double>& im, bool need) {
    LossGrad<double> r{0.0, BasicImage<double>(im.shape())};
    for (std::size_t i = 0; i < im.size(); ++i) {
      const double d = im[i] - star[i];
      r.loss += d * d;
      if (need) r.grad[i] = 2 * d;
    }
    return r;
  };
  const double eps = 8 * kE;
  const auto o = pgd_ascent(f, x, eps, PgdConfig{2 * kE, 10, InitMode::clean, 0});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(o.delta.delta[i], star[i] > x[i] ? -eps : eps, 1e-12);
  EXPECT_GE(o.final_loss, o.initial_loss);
}

TEST(PgdAscent, ConcaveOracleIsMonotoneWhileUnprojected) {
  const BasicImage<double> x({2, 2, 3}, 0.5);
  GradOracle<double> f = [](const BasicImage<double>& im, bool need) {
    LossGrad<double> r{0.0, BasicImage<double>(im.shape())};
    for (std::size_t i = 0; i < im.size(); ++i) {
      const double d = im[i] - 0.9;
      r.loss -= d * d;
      if (need) r.grad[i] = -2 * d;
    }
    return r;
  };
  const auto o = pgd_ascent(f, x, 8 * kE, PgdConfig{2 * kE, 10, InitMode::clean, 0});
  EXPECT_TRUE(std::is_sorted(o.trace.begin(), o.trace.end()));
  EXPECT_GT(o.final_loss, o.initial_loss);
}

TEST(PgdAscent, RandomInitIsSeededAndFeasible) {
  const BasicImage<double> x({4, 4, 3}, 0.0);
  GradOracle<double> f = [](const BasicImage<double>& im, bool) {
    return LossGrad<double>{0.0, BasicImage<double>(im.shape())};
  };
  const PgdConfig cfg{2 * kE, 1, InitMode::random_uniform, 42};
  const auto a = pgd_ascent(f, x, 4 * kE, cfg);
  const auto b = pgd_ascent(f, x, 4 * kE, cfg);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_TRUE(a.adversarial.is_feasible());
  EXPECT_LE(linf_norm(a.delta.delta), 4 * kE);
}

TEST(PgdAscent, NonFiniteLossRaisesNumericalError) {
  const BasicImage<double> x({2, 2, 3}, 0.5);
  GradOracle<double> f = [](const BasicImage<double>& im, bool) {
    return LossGrad<double>{std::nan(""), BasicImage<double>(im.shape())};
  };
  EXPECT_THROW(pgd_ascent(f, x, kE, PgdConfig{}), NumericalError);
}

TEST(PgdConfigCheck, FlagsStepLargerThanBudget) {
  EXPECT_TRUE(PgdConfig{}.check(kE).has_value());
  EXPECT_FALSE(PgdConfig{}.check(8 * kE).has_value());
}
