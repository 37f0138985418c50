#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtadv/image.hpp"
#include "mtadv/rng.hpp"

namespace mtadv {

enum class StageTag { task, clip, composed };

std::string to_string(StageTag tag);

/// Additive delta with the L-infinity radius it was produced under.
template <typename T>
struct Perturbation {
  BasicImage<T> delta;
  double budget = 0.0;
  StageTag stage = StageTag::composed;

  static Perturbation zero(Shape shape, StageTag stage) {
    return Perturbation{BasicImage<T>(shape), 0.0, stage};
  }
  bool within_budget(double tol = 1e-9) const {
    return static_cast<double>(linf_norm(delta)) <= budget + tol;
  }
};

/// eps_total = eps_task + eps_clip, lambda = eps_task / eps_clip.
struct BudgetSplit {
  double eps_task = 0.0;
  double eps_clip = 0.0;
  double lambda = 1.0;  // +inf when eps_clip == 0
  double eps_total = 0.0;

  /// Builds a split from explicit components (used for ablation rows and the
  /// eps_clip = 0 degeneracy, where lambda is infinite).
  static BudgetSplit from_parts(double eps_task, double eps_clip);
};

/// Splits eps_total at ratio lambda:1 between the task and CLIP stages.
BudgetSplit split_budget(double eps_total, double lambda);

enum class InitMode { clean, random_uniform };

std::string to_string(InitMode mode);
InitMode init_mode_from_string(const std::string& s);

struct PgdConfig {
  double alpha = 2.0 / 255.0;
  int iterations = 10;
  InitMode init_mode = InitMode::clean;
  std::uint64_t seed = 0;

  /// Returns a warning when the configuration cannot be useful for `eps`.
  std::optional<std::string> check(double eps) const;
};

template <typename T>
struct LossGrad {
  double loss = 0.0;
  BasicImage<T> grad;
};

/// Loss (and, when requested, input gradient) of an objective at an image.
template <typename T>
using GradOracle = std::function<LossGrad<T>(const BasicImage<T>& image, bool need_grad)>;

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
constexpr T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

/// Element-wise clip of delta into [-eps, eps].
template <typename T>
Perturbation<T> project_linf(Perturbation<T> p, double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("project_linf: eps must be non-negative");
  const T e = static_cast<T>(eps);
  for (auto& v : p.delta) v = std::clamp(v, -e, e);
  p.budget = eps;
  return p;
}

/// One projected sign-gradient ascent step around x_clean.
template <typename T>
BasicImage<T> pgd_step(const BasicImage<T>& x_t, const BasicImage<T>& grad, double alpha,
                       const BasicImage<T>& x_clean, double eps) {
  require_same_shape(x_t, grad, "pgd_step(grad)");
  require_same_shape(x_t, x_clean, "pgd_step(x_clean)");
  if (!(eps >= 0.0)) throw std::invalid_argument("pgd_step: eps must be non-negative");
  const T a = static_cast<T>(alpha);
  const T e = static_cast<T>(eps);
  BasicImage<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T d = x_t[i] + a * sign_of(grad[i]) - x_clean[i];
    d = std::clamp(d, -e, e);
    out[i] = std::clamp(x_clean[i] + d, T(0), T(1));
  }
  return out;
}

/// Returns delta with fl(base + delta) == target element-wise. `target` is
/// adjusted by at most a few ulps (and kept in [0,1]) where no such delta
/// exists for the original value.
template <typename T>
BasicImage<T> exact_offset(const BasicImage<T>& base, BasicImage<T>& target) {
  require_same_shape(base, target, "exact_offset");
  BasicImage<T> delta(base.shape());
  for (std::size_t i = 0; i < base.size(); ++i) {
    T t = target[i];
    T d = t - base[i];
    for (int k = 0; k < 8; ++k) {
      const T r = std::clamp(base[i] + d, T(0), T(1));
      if (r == t) break;
      t = r;
      d = t - base[i];
    }
    if (base[i] + d != t) throw NumericalError("exact_offset: residual folding did not converge");
    target[i] = t;
    delta[i] = d;
  }
  return delta;
}

template <typename T>
struct PgdOutcome {
  Perturbation<T> delta;
  BasicImage<T> adversarial;  // == center + delta, bit-exact
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> trace;  // loss at x^0 .. x^T
};

namespace detail {
template <typename T>
LossGrad<T> call_oracle(const GradOracle<T>& oracle, const BasicImage<T>& x, bool need_grad) {
  LossGrad<T> r = oracle(x, need_grad);
  if (!std::isfinite(r.loss)) throw NumericalError("objective returned a non-finite loss");
  if (need_grad) {
    require_same_shape(x, r.grad, "gradient oracle");
    for (T g : r.grad)
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericalError("objective returned a non-finite gradient");
  }
  return r;
}
}  // namespace detail

/// Projected sign-gradient ascent of `oracle` over the L-infinity ball of
/// radius eps around `center`, intersected with [0,1]^n.
template <typename T>
PgdOutcome<T> pgd_ascent(const GradOracle<T>& oracle, const BasicImage<T>& center, double eps,
                         const PgdConfig& cfg, StageTag stage = StageTag::task) {
  if (!(eps >= 0.0)) throw std::invalid_argument("pgd_ascent: eps must be non-negative");
  if (cfg.iterations < 0) throw std::invalid_argument("pgd_ascent: iterations must be >= 0");

  PgdOutcome<T> out;
  const double clean_loss = detail::call_oracle(oracle, center, false).loss;
  out.initial_loss = clean_loss;

  if (eps == 0.0) {
    out.delta = Perturbation<T>::zero(center.shape(), stage);
    out.adversarial = center;
    out.final_loss = clean_loss;
    out.trace = {clean_loss};
    return out;
  }

  BasicImage<T> x = center;
  if (cfg.init_mode == InitMode::random_uniform) {
    Rng rng(cfg.seed);
    const T e = static_cast<T>(eps);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T u = static_cast<T>(rng.uniform(-eps, eps));
      x[i] = std::clamp(center[i] + std::clamp(u, -e, e), T(0), T(1));
    }
  }

  for (int t = 0; t < cfg.iterations; ++t) {
    LossGrad<T> lg = detail::call_oracle(oracle, x, true);
    out.trace.push_back(lg.loss);
    x = pgd_step(x, lg.grad, cfg.alpha, center, eps);
  }
  out.final_loss = detail::call_oracle(oracle, x, false).loss;
  out.trace.push_back(out.final_loss);

  out.delta.delta = exact_offset(center, x);
  out.delta.budget = eps;
  out.delta.stage = stage;
  out.adversarial = std::move(x);
  return out;
}

template <typename T>
struct Composed {
  Perturbation<T> delta;      // delta_task + delta_clip + clamp residual
  BasicImage<T> adversarial;  // == x + delta, bit-exact
};

/// delta = delta_task + delta_clip, re-clamped so that x + delta is a valid
/// image; the clamp residual is folded into the returned delta. The sum is
/// evaluated in stage order ((x + first) + second) so that it reproduces the
/// image the second stage actually produced.
template <typename T>
Composed<T> compose_perturbations(const Perturbation<T>& task, const Perturbation<T>& clip,
                                  const BasicImage<T>& x, bool clip_first = false) {
  require_same_shape(task.delta, clip.delta, "compose_perturbations");
  require_same_shape(task.delta, x, "compose_perturbations(x)");
  const double budget = task.budget + clip.budget;

  BasicImage<T> adv(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    adv[i] = std::clamp(clip_first ? (x[i] + clip.delta[i]) + task.delta[i]
                                   : (x[i] + task.delta[i]) + clip.delta[i],
                        T(0), T(1));

  Composed<T> out;
  out.delta.delta = exact_offset(x, adv);
  out.delta.budget = budget;
  out.delta.stage = StageTag::composed;
  if (!out.delta.within_budget())
    throw std::logic_error("compose_perturbations: composed delta exceeds eps_task + eps_clip");
  out.adversarial = std::move(adv);
  return out;
}

}  // namespace mtadv
