#include "mtadv/attacks.hpp"

#include <cmath>

#include "mtadv/errors.hpp"
#include "mtadv/json_util.hpp"

namespace mtadv {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::single_task: return "single_task";
    case Strategy::joint: return "joint";
    case Strategy::mt_advclip: return "mt_advclip";
    case Strategy::order_reversed: return "order_reversed";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& s) {
  for (auto v : {Strategy::single_task, Strategy::joint, Strategy::mt_advclip, Strategy::order_reversed})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

std::string to_string(AttackTarget t) { return t == AttackTarget::dense ? "dense" : "clip"; }

AttackTarget attack_target_from_string(const std::string& s) {
  if (s == "dense") return AttackTarget::dense;
  if (s == "clip") return AttackTarget::clip;
  throw std::invalid_argument("unknown attack target '" + s + "'");
}

namespace {

bool uses_single_radius(Strategy s) { return s == Strategy::single_task || s == Strategy::joint; }

nlohmann::json pgd_to_json(const PgdConfig& c) {
  return {{"alpha", c.alpha}, {"iterations", c.iterations}, {"init", to_string(c.init_mode)}, {"seed", c.seed}};
}

PgdConfig pgd_from_json(const nlohmann::json& j, const std::string& where, PgdConfig c) {
  JsonReader r(j, where);
  std::string init = to_string(c.init_mode);
  r.get("alpha", c.alpha);
  r.get("iterations", c.iterations);
  r.get("init", init);
  r.get("seed", c.seed);
  r.finish();
  try {
    c.init_mode = init_mode_from_string(init);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ".init: " + e.what());
  }
  return c;
}

const char* kZeroKlGradient =
    "the KL objective has zero gradient at the clean image, so a clean start leaves this stage where it began";

}  // namespace

std::vector<std::string> AttackSpec::warnings() const {
  std::vector<std::string> out;
  auto check = [&](const PgdConfig& c, double eps, const char* stage) {
    if (auto w = c.check(eps)) out.push_back(name + " " + stage + ": " + *w);
  };
  switch (strategy) {
    case Strategy::single_task:
      check(stage1, budget.eps_total, "stage1");
      if (target == AttackTarget::clip && stage1.init_mode == InitMode::clean && budget.eps_total > 0)
        out.push_back(name + " stage1: " + kZeroKlGradient);
      break;
    case Strategy::joint:
      check(stage1, budget.eps_total, "stage1");
      break;
    case Strategy::mt_advclip:
      check(stage1, budget.eps_task, "stage1");
      check(stage2, budget.eps_clip, "stage2");
      if (!(budget.lambda > 1.0)) out.push_back(name + ": lambda <= 1 is an ablation, not the canonical split");
      break;
    case Strategy::order_reversed:
      check(stage1, budget.eps_clip, "stage1");
      check(stage2, budget.eps_task, "stage2");
      if (stage1.init_mode == InitMode::clean && budget.eps_clip > 0)
        out.push_back(name + " stage1: " + kZeroKlGradient);
      break;
  }
  return out;
}

void AttackSpec::validate() const {
  const std::string where = "attacks." + (name.empty() ? std::string("<unnamed>") : name);
  if (name.empty()) throw ConfigError("attacks: every attack needs a name");
  if (!(budget.eps_task >= 0.0) || !(budget.eps_clip >= 0.0) || !std::isfinite(budget.eps_total))
    throw ConfigError(where + ": budgets must be finite and non-negative");
  for (const PgdConfig* c : {&stage1, &stage2}) {
    if (!(c->alpha > 0.0)) throw ConfigError(where + ": alpha must be positive");
    if (c->iterations < 1) throw ConfigError(where + ": iterations must be >= 1");
  }
  if (!(joint_weight >= 0.0)) throw ConfigError(where + ".joint_weight: must be >= 0");
  if (head == HeadKind::clip_retrieval) throw ConfigError(where + ".head: must be a dense head");
}

nlohmann::json to_json(const AttackSpec& s) {
  nlohmann::json j = {{"name", s.name},
                      {"strategy", to_string(s.strategy)},
                      {"head", to_string(s.head)},
                      {"stage1", pgd_to_json(s.stage1)}};
  if (uses_single_radius(s.strategy)) {
    j["eps"] = s.budget.eps_total;
  } else {
    j["eps_task"] = s.budget.eps_task;
    j["eps_clip"] = s.budget.eps_clip;
    j["stage2"] = pgd_to_json(s.stage2);
  }
  if (s.strategy == Strategy::single_task) j["target"] = to_string(s.target);
  if (s.strategy == Strategy::joint) j["joint_weight"] = s.joint_weight;
  if (s.control_model) j["control_model"] = true;
  return j;
}

AttackSpec attack_spec_from_json(const nlohmann::json& j, const std::string& where) {
  AttackSpec s;
  JsonReader r(j, where);
  std::string strategy = to_string(s.strategy), target = to_string(s.target), head = to_string(s.head);
  r.get("name", s.name);
  r.get("strategy", strategy);
  r.get("target", target);
  r.get("head", head);
  try {
    s.strategy = strategy_from_string(strategy);
    s.target = attack_target_from_string(target);
    s.head = head_kind_from_string(head);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }

  std::optional<double> eps, eps_total, lambda, eps_task, eps_clip;
  auto opt = [&](const char* key, std::optional<double>& out) {
    if (const auto* v = r.child(key)) out = parse_real(*v, where + "." + key);
  };
  opt("eps", eps);
  opt("eps_total", eps_total);
  opt("lambda", lambda);
  opt("eps_task", eps_task);
  opt("eps_clip", eps_clip);
  try {
    if (uses_single_radius(s.strategy)) {
      if (!eps || lambda || eps_task || eps_clip || eps_total)
        throw ConfigError(where + ": " + strategy + " takes a single 'eps'");
      s.budget = BudgetSplit::from_parts(*eps, 0.0);
    } else if (eps_total && lambda && !eps_task && !eps_clip && !eps) {
      s.budget = split_budget(*eps_total, *lambda);
    } else if (eps_task && eps_clip && !eps_total && !lambda && !eps) {
      s.budget = BudgetSplit::from_parts(*eps_task, *eps_clip);
    } else {
      throw ConfigError(where + ": give either eps_total and lambda, or eps_task and eps_clip");
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }

  if (const auto* c = r.child("stage1")) s.stage1 = pgd_from_json(*c, where + ".stage1", s.stage1);
  if (const auto* c = r.child("stage2")) s.stage2 = pgd_from_json(*c, where + ".stage2", s.stage2);
  r.get("joint_weight", s.joint_weight);
  r.get("control_model", s.control_model);
  r.finish();
  s.validate();
  return s;
}

std::uint64_t stage_seed(std::uint64_t attack_seed, const std::string& sample_id, int stage) {
  return derive_seed(attack_seed, "attack:sample-" + sample_id + ":stage" + std::to_string(stage));
}

namespace {

template <typename T>
const DenseModel<T>& need_task(const AttackContext<T>& ctx) {
  if (!ctx.task_model) throw std::invalid_argument("attack needs a dense task model");
  return *ctx.task_model;
}

template <typename T>
ClipKlObjective<T> make_kl(const AttackContext<T>& ctx, const BasicImage<T>& clean) {
  if (!ctx.clip_model || !ctx.bank) throw std::invalid_argument("attack needs the CLIP model and text bank");
  return ClipKlObjective<T>(*ctx.clip_model, *ctx.bank, clean, ctx.temperature);
}

template <typename T>
GradOracle<T> task_oracle(const DenseModel<T>& model, const TaskTarget& target) {
  return [&model, &target](const BasicImage<T>& x, bool need_grad) {
    return task_objective(model, x, target, need_grad);
  };
}

template <typename T>
GradOracle<T> kl_oracle(const ClipKlObjective<T>& kl) {
  return [&kl](const BasicImage<T>& x, bool need_grad) { return kl(x, need_grad); };
}

template <typename T>
void finish(AttackResult<T>& r, const BasicImage<T>& clean, bool clip_first) {
  Composed<T> c = compose_perturbations(r.delta_task, r.delta_clip, clean, clip_first);
  r.delta_composed = std::move(c.delta);
  r.adversarial = std::move(c.adversarial);
}

template <typename T>
AttackResult<T> start(const SyntheticSample& s, const char* attack) {
  AttackResult<T> r;
  r.sample_id = s.id;
  r.attack = attack;
  return r;
}

template <typename T>
void require_valid_image(const SyntheticSample& s, const BasicImage<T>& x) {
  if (!x.is_feasible()) throw AttackError(s.id, "clean image has pixels outside [0, 1]");
}

}  // namespace

template <typename T>
AttackResult<T> attack_single_task(const AttackContext<T>& ctx, const SyntheticSample& sample,
                                   AttackTarget target, double eps, const PgdConfig& cfg) {
  const BasicImage<T> x = sample.image.template cast<T>();
  require_valid_image(sample, x);
  AttackResult<T> r = start<T>(sample, "single_task");
  try {
    if (target == AttackTarget::dense) {
      const DenseModel<T>& model = need_task(ctx);
      const TaskTarget tt = task_target(sample, model.kind());
      PgdOutcome<T> o = pgd_ascent(task_oracle(model, tt), x, eps, cfg, StageTag::task);
      r.stages.push_back({"task", eps, std::move(o.trace)});
      r.delta_task = std::move(o.delta);
      r.delta_clip = Perturbation<T>::zero(x.shape(), StageTag::clip);
    } else {
      const ClipKlObjective<T> kl = make_kl(ctx, x);
      PgdOutcome<T> o = pgd_ascent(kl_oracle(kl), x, eps, cfg, StageTag::clip);
      r.stages.push_back({"kl", eps, std::move(o.trace)});
      r.delta_clip = std::move(o.delta);
      r.delta_task = Perturbation<T>::zero(x.shape(), StageTag::task);
      if (cfg.init_mode == InitMode::clean && eps > 0) r.warnings.push_back(kZeroKlGradient);
    }
    finish(r, x, false);
  } catch (const AttackError&) {
    throw;
  } catch (const std::exception& e) {
    throw AttackError(sample.id, e.what());
  }
  return r;
}

template <typename T>
AttackResult<T> attack_joint(const AttackContext<T>& ctx, const SyntheticSample& sample, double eps,
                             double weight, const PgdConfig& cfg) {
  const BasicImage<T> x = sample.image.template cast<T>();
  require_valid_image(sample, x);
  AttackResult<T> r = start<T>(sample, "joint");
  try {
    const DenseModel<T>& model = need_task(ctx);
    const TaskTarget tt = task_target(sample, model.kind());
    const ClipKlObjective<T> kl = make_kl(ctx, x);
    std::vector<std::optional<double>> cosines;
    GradOracle<T> oracle = [&](const BasicImage<T>& img, bool need_grad) {
      JointEval<T> e = joint_objective(model, kl, img, tt, weight, need_grad);
      if (need_grad && weight > 0.0) cosines.push_back(e.cosine);
      return std::move(e.total);
    };
    PgdOutcome<T> o = pgd_ascent(oracle, x, eps, cfg, StageTag::task);
    r.stages.push_back({"joint", eps, std::move(o.trace)});
    r.cosines = std::move(cosines);
    r.delta_task = std::move(o.delta);
    r.delta_clip = Perturbation<T>::zero(x.shape(), StageTag::clip);
    finish(r, x, false);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, e.what());
  }
  return r;
}

template <typename T>
AttackResult<T> attack_mt_advclip(const AttackContext<T>& ctx, const SyntheticSample& sample,
                                  const BudgetSplit& split, const PgdConfig& stage1,
                                  const PgdConfig& stage2) {
  const BasicImage<T> x = sample.image.template cast<T>();
  require_valid_image(sample, x);
  AttackResult<T> r = start<T>(sample, "mt_advclip");
  BasicImage<T> x_task;
  try {
    const DenseModel<T>& model = need_task(ctx);
    const TaskTarget tt = task_target(sample, model.kind());
    PgdOutcome<T> o = pgd_ascent(task_oracle(model, tt), x, split.eps_task, stage1, StageTag::task);
    r.stages.push_back({"task", split.eps_task, std::move(o.trace)});
    r.delta_task = std::move(o.delta);
    x_task = std::move(o.adversarial);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, std::string("stage 1: ") + e.what());
  }
  try {
    const ClipKlObjective<T> kl = make_kl(ctx, x);
    PgdOutcome<T> o = pgd_ascent(kl_oracle(kl), x_task, split.eps_clip, stage2, StageTag::clip);
    r.stages.push_back({"kl", split.eps_clip, std::move(o.trace)});
    r.delta_clip = std::move(o.delta);
  } catch (const NumericalError& e) {
    r.partial = true;
    r.warnings.push_back(std::string("stage 2 failed, keeping the stage 1 result: ") + e.what());
    r.delta_clip = Perturbation<T>::zero(x.shape(), StageTag::clip);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, std::string("stage 2: ") + e.what());
  }
  try {
    finish(r, x, false);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, e.what());
  }
  return r;
}

template <typename T>
AttackResult<T> attack_order_reversed(const AttackContext<T>& ctx, const SyntheticSample& sample,
                                      const BudgetSplit& split, const PgdConfig& stage1,
                                      const PgdConfig& stage2) {
  const BasicImage<T> x = sample.image.template cast<T>();
  require_valid_image(sample, x);
  AttackResult<T> r = start<T>(sample, "order_reversed");
  BasicImage<T> x_clip;
  try {
    const ClipKlObjective<T> kl = make_kl(ctx, x);
    PgdOutcome<T> o = pgd_ascent(kl_oracle(kl), x, split.eps_clip, stage1, StageTag::clip);
    r.stages.push_back({"kl", split.eps_clip, std::move(o.trace)});
    r.delta_clip = std::move(o.delta);
    x_clip = std::move(o.adversarial);
    if (stage1.init_mode == InitMode::clean && split.eps_clip > 0) r.warnings.push_back(kZeroKlGradient);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, std::string("stage 1: ") + e.what());
  }
  try {
    const DenseModel<T>& model = need_task(ctx);
    const TaskTarget tt = task_target(sample, model.kind());
    PgdOutcome<T> o = pgd_ascent(task_oracle(model, tt), x_clip, split.eps_task, stage2, StageTag::task);
    r.stages.push_back({"task", split.eps_task, std::move(o.trace)});
    r.delta_task = std::move(o.delta);
  } catch (const NumericalError& e) {
    r.partial = true;
    r.warnings.push_back(std::string("stage 2 failed, keeping the stage 1 result: ") + e.what());
    r.delta_task = Perturbation<T>::zero(x.shape(), StageTag::task);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, std::string("stage 2: ") + e.what());
  }
  try {
    finish(r, x, true);
  } catch (const std::exception& e) {
    throw AttackError(sample.id, e.what());
  }
  return r;
}

template <typename T>
AttackResult<T> run_attack(const AttackSpec& spec, const AttackContext<T>& ctx, const SyntheticSample& sample) {
  PgdConfig s1 = spec.stage1, s2 = spec.stage2;
  s1.seed = stage_seed(spec.stage1.seed, sample.id, 1);
  s2.seed = stage_seed(spec.stage2.seed, sample.id, 2);
  AttackResult<T> r;
  switch (spec.strategy) {
    case Strategy::single_task:
      r = attack_single_task(ctx, sample, spec.target, spec.budget.eps_total, s1);
      break;
    case Strategy::joint:
      r = attack_joint(ctx, sample, spec.budget.eps_total, spec.joint_weight, s1);
      break;
    case Strategy::mt_advclip:
      r = attack_mt_advclip(ctx, sample, spec.budget, s1, s2);
      break;
    case Strategy::order_reversed:
      r = attack_order_reversed(ctx, sample, spec.budget, s1, s2);
      break;
  }
  r.attack = spec.name;
  return r;
}

#define MTADV_INSTANTIATE(T)                                                                          \
  template AttackResult<T> attack_single_task<T>(const AttackContext<T>&, const SyntheticSample&,     \
                                                 AttackTarget, double, const PgdConfig&);            \
  template AttackResult<T> attack_joint<T>(const AttackContext<T>&, const SyntheticSample&, double,   \
                                           double, const PgdConfig&);                                 \
  template AttackResult<T> attack_mt_advclip<T>(const AttackContext<T>&, const SyntheticSample&,      \
                                                const BudgetSplit&, const PgdConfig&,                 \
                                                const PgdConfig&);                                    \
  template AttackResult<T> attack_order_reversed<T>(const AttackContext<T>&, const SyntheticSample&,  \
                                                    const BudgetSplit&, const PgdConfig&,             \
                                                    const PgdConfig&);                                \
  template AttackResult<T> run_attack<T>(const AttackSpec&, const AttackContext<T>&,                  \
                                         const SyntheticSample&);

MTADV_INSTANTIATE(float)
MTADV_INSTANTIATE(double)

}  // namespace mtadv
