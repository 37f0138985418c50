#include "mtadv/perturbation.hpp"

namespace mtadv {

std::string to_string(StageTag tag) {
  switch (tag) {
    case StageTag::task: return "task";
    case StageTag::clip: return "clip";
    case StageTag::composed: return "composed";
  }
  return "unknown";
}

std::string to_string(InitMode mode) {
  return mode == InitMode::clean ? "clean" : "random_uniform";
}

InitMode init_mode_from_string(const std::string& s) {
  if (s == "clean") return InitMode::clean;
  if (s == "random_uniform") return InitMode::random_uniform;
  throw std::invalid_argument("unknown init mode '" + s + "' (expected clean|random_uniform)");
}

BudgetSplit BudgetSplit::from_parts(double eps_task, double eps_clip) {
  if (!(eps_task >= 0.0) || !(eps_clip >= 0.0))
    throw std::invalid_argument("BudgetSplit: components must be non-negative");
  BudgetSplit s;
  s.eps_task = eps_task;
  s.eps_clip = eps_clip;
  s.eps_total = eps_task + eps_clip;
  s.lambda = eps_clip > 0.0 ? eps_task / eps_clip : std::numeric_limits<double>::infinity();
  return s;
}

BudgetSplit split_budget(double eps_total, double lambda) {
  if (!(eps_total >= 0.0)) throw std::invalid_argument("split_budget: eps_total must be >= 0");
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("split_budget: lambda must be a positive finite number");
  BudgetSplit s;
  s.eps_clip = eps_total / (1.0 + lambda);
  s.eps_task = eps_total - s.eps_clip;
  s.eps_total = eps_total;
  s.lambda = lambda;
  return s;
}

std::optional<std::string> PgdConfig::check(double eps) const {
  if (iterations <= 0) return "iterations must be positive";
  if (!(alpha > 0.0)) return "alpha must be positive";
  if (eps > 0.0 && alpha > eps)
    return "step size " + std::to_string(alpha) + " exceeds the budget " + std::to_string(eps);
  return std::nullopt;
}

}  // namespace mtadv
