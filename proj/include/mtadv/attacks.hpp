#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtadv/dataset.hpp"
#include "mtadv/models.hpp"
#include "mtadv/objectives.hpp"
#include "mtadv/perturbation.hpp"

namespace mtadv {

enum class Strategy { single_task, joint, mt_advclip, order_reversed };
/// Which model a single-task attack targets.
enum class AttackTarget { dense, clip };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
std::string to_string(AttackTarget t);
AttackTarget attack_target_from_string(const std::string& s);

/// single_task and joint use budget.eps_total as their one radius.
/// mt_advclip runs the task stage (eps_task) first, order_reversed the CLIP
/// stage (eps_clip) first.
struct AttackSpec {
  std::string name;
  Strategy strategy = Strategy::mt_advclip;
  AttackTarget target = AttackTarget::dense;
  HeadKind head = HeadKind::detection;
  BudgetSplit budget = split_budget(8.0 / 255.0, 3.0);
  PgdConfig stage1;
  PgdConfig stage2;
  double joint_weight = 1.0;
  bool control_model = false;  // attack the frozen-random-backbone control instead

  /// Human-readable problems that do not make the spec invalid.
  std::vector<std::string> warnings() const;
  /// Throws ConfigError on an unusable spec.
  void validate() const;
};

nlohmann::json to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const nlohmann::json& j, const std::string& where);

struct StageTrace {
  std::string objective;  // "task" or "kl" or "joint"
  double eps = 0.0;
  std::vector<double> loss;  // at x^0 .. x^T
};

template <typename T>
struct AttackResult {
  std::string sample_id;
  std::string attack;
  Perturbation<T> delta_task;
  Perturbation<T> delta_clip;
  Perturbation<T> delta_composed;
  BasicImage<T> adversarial;  // == clean + delta_composed, bit-exact
  std::vector<StageTrace> stages;
  std::vector<std::optional<double>> cosines;  // joint: task vs KL gradient per iteration
  bool partial = false;
  std::vector<std::string> warnings;
};

/// Everything an attack may need for one sample.
template <typename T>
struct AttackContext {
  const DenseModel<T>* task_model = nullptr;
  const ClipModel<T>* clip_model = nullptr;
  const TextBank<T>* bank = nullptr;
  double temperature = 0.07;
};

/// Seed of a stage's random start for one sample.
std::uint64_t stage_seed(std::uint64_t attack_seed, const std::string& sample_id, int stage);

template <typename T>
AttackResult<T> attack_single_task(const AttackContext<T>& ctx, const SyntheticSample& sample,
                                   AttackTarget target, double eps, const PgdConfig& cfg);

template <typename T>
AttackResult<T> attack_joint(const AttackContext<T>& ctx, const SyntheticSample& sample, double eps,
                             double weight, const PgdConfig& cfg);

template <typename T>
AttackResult<T> attack_mt_advclip(const AttackContext<T>& ctx, const SyntheticSample& sample,
                                  const BudgetSplit& split, const PgdConfig& stage1,
                                  const PgdConfig& stage2);

template <typename T>
AttackResult<T> attack_order_reversed(const AttackContext<T>& ctx, const SyntheticSample& sample,
                                      const BudgetSplit& split, const PgdConfig& stage1,
                                      const PgdConfig& stage2);

/// Dispatches on spec.strategy. Per-stage seeds are derived from the stage
/// configs' seeds and the sample id. Errors surface as AttackError.
template <typename T>
AttackResult<T> run_attack(const AttackSpec& spec, const AttackContext<T>& ctx,
                           const SyntheticSample& sample);

}  // namespace mtadv
