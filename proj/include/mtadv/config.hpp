#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtadv/attacks.hpp"
#include "mtadv/dataset.hpp"
#include "mtadv/training.hpp"

namespace mtadv {

enum class Precision { float32, float64 };
std::string to_string(Precision p);

/// Expands into the attack rows of the three report tables; see RunConfig::expand_attacks.
struct AttackPlan {
  std::vector<HeadKind> heads = {HeadKind::detection, HeadKind::segmentation};
  double eps_total = 8.0 / 255.0;
  double lambda = 3.0;
  double alpha = 2.0 / 255.0;
  int iterations = 10;
  double joint_weight = 1.0;
  /// (eps_total, lambda) pairs for the MT-AdvCLIP split sweep.
  std::vector<std::pair<double, double>> sweep;
  /// (eps_task, eps_clip) pairs run in both stage orders.
  std::vector<std::pair<double, double>> orders;
  bool compute_matched = true;  // also run single-stage baselines for 2x iterations
  bool control = true;          // attack the frozen-random-backbone control models
  std::vector<AttackSpec> extra;
};

struct EvaluationConfig {
  int triptychs = 4;
  double conflict_probe = 2.0 / 255.0;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  Precision precision = Precision::float64;
  int workers = 1;
  DatasetSpec dataset;
  bool dataset_seed_explicit = false;
  TrainHyperparams clip;
  TrainHyperparams dense;
  TrainHyperparams control;
  AttackPlan attack;
  EvaluationConfig evaluation;

  /// The seed actually used for the dataset: explicit, or derived from `seed`.
  DatasetSpec resolved_dataset() const;
  /// The baselines, the canonical MT-AdvCLIP row, the sweep, the order
  /// ablation and any extra specs, deduplicated by name, in a fixed order.
  std::vector<AttackSpec> expand_attacks() const;
};

/// The defaults reproduce the full protocol: canonical split, order ablation
/// and budget-split sweep.
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& c);
/// Starts from default_run_config() and applies the keys present in `j`;
/// unknown keys are ConfigErrors.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Row names used by expand_attacks, e.g. "mt_advclip.detection.6-2" (budgets
/// in 1/255 units) and "reversed.segmentation.2-6".
std::string staged_attack_name(Strategy s, HeadKind head, const BudgetSplit& b);

/// "6/255"-style rendering of budgets that are multiples of 1/255, else %g.
std::string format_eps(double eps);

}  // namespace mtadv
