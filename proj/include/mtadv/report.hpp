#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtadv/attacks.hpp"
#include "mtadv/config.hpp"
#include "mtadv/metrics.hpp"

namespace mtadv {

/// What every victim model made of one (clean or adversarial) image.
struct SampleOutcome {
  std::string sample_id;
  int retrieval_top1 = -1;
  bool retrieval_hit = false;
  std::optional<IouCounts> seg;                      // when a segmentation model is evaluated
  std::optional<std::vector<CellPrediction>> cells;  // when a detection model is evaluated
  std::optional<IouCounts> control_seg;
  std::optional<std::vector<CellPrediction>> control_cells;
};

nlohmann::json to_json(const SampleOutcome& o);
SampleOutcome sample_outcome_from_json(const nlohmann::json& j);

template <typename T>
struct VictimModels {
  const ClipModel<T>* clip = nullptr;
  const TextBank<T>* bank = nullptr;
  const DenseModel<T>* detection = nullptr;
  const DenseModel<T>* segmentation = nullptr;
  const DenseModel<T>* control_detection = nullptr;
  const DenseModel<T>* control_segmentation = nullptr;
};

template <typename T>
SampleOutcome evaluate_outcome(const VictimModels<T>& victims, const SyntheticSample& sample,
                               const BasicImage<T>& image);

struct Metrics {
  std::optional<double> recall_at_1;
  std::optional<double> cell_map;
  std::optional<double> miou;
  std::optional<double> control_cell_map;
  std::optional<double> control_miou;
};

/// Aggregates per-sample outcomes; `samples` supplies the ground truth, in the
/// same order as `outcomes`.
Metrics aggregate_metrics(std::span<const SampleOutcome> outcomes, std::span<const SyntheticSample> samples);

/// Budget audit of one attack output, computed at full precision.
struct BudgetAudit {
  double linf_composed = 0.0;
  double linf_task = 0.0;
  double linf_clip = 0.0;
  bool feasible = true;       // adversarial image within [0,1]
  bool reconstructs = true;   // clean + delta_composed == adversarial, bit-exact
  bool within_budget = true;  // every delta within its own budget (+ tolerance)
};

template <typename T>
BudgetAudit audit_result(const AttackResult<T>& r, const BasicImage<T>& clean, double tolerance);

nlohmann::json to_json(const BudgetAudit& a);
BudgetAudit budget_audit_from_json(const nlohmann::json& j);

/// Everything persisted about one attacked sample.
struct AttackRecord {
  std::string sample_id;
  std::optional<std::string> error;  // set when the attack failed on this sample
  bool partial = false;
  BudgetAudit audit;
  std::vector<StageTrace> stages;
  std::vector<std::optional<double>> cosines;
  std::vector<std::string> warnings;
  SampleOutcome outcome;
};

nlohmann::json to_json(const AttackRecord& r);
AttackRecord attack_record_from_json(const nlohmann::json& j);

/// All persisted records of one attack row (any order, possibly incomplete).
struct AttackRows {
  AttackSpec spec;
  std::vector<AttackRecord> records;
};

struct MetricRow {
  AttackSpec spec;
  bool complete = false;  // false: a gap (missing or failed samples)
  int samples = 0;
  int partial = 0;
  int failed = 0;
  Metrics adversarial;
  Metrics asr;  // percent, relative to the clean row
  nlohmann::json diagnostics = nlohmann::json::object();
};

struct MetricReport {
  nlohmann::json config;  // echo without machine-specific fields
  std::uint64_t seed = 0;
  int samples = 0;
  Metrics clean;
  std::vector<MetricRow> rows;
  std::vector<std::string> missing;
  nlohmann::json diagnostics = nlohmann::json::object();

  const MetricRow* find(const std::string& name) const;
};

/// ASR for every metric the clean row defines; nullopt for metrics the clean
/// row lacks or where the clean value is zero.
Metrics asr_of(const Metrics& clean, const Metrics& adversarial);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricReport& r);

/// Aggregates the clean outcomes and every attack row into a report. Rows
/// with missing or failed samples keep their counts but get no metrics.
MetricReport run_evaluation_suite(const nlohmann::json& config_echo, std::uint64_t seed,
                                  std::span<const SyntheticSample> samples,
                                  std::span<const SampleOutcome> clean, std::span<const AttackRows> attacks);

/// The report tables. Metrics in percent with 2 decimals, ASR with 1 decimal;
/// gaps are empty cells.
std::string table1_csv(const MetricReport& r, const RunConfig& cfg);
std::string table2_csv(const MetricReport& r, const RunConfig& cfg);
std::string table3_csv(const MetricReport& r, const RunConfig& cfg);

inline constexpr const char* kTable1Header =
    "head,method,attack,dense_metric,dense_clean,dense_adv,recall_clean,recall_adv,asr_dense,asr_recall";
inline constexpr const char* kTable2Header =
    "head,order,attack,eps_task,eps_clip,dense_metric,dense_clean,dense_adv,recall_clean,recall_adv,asr_dense,"
    "asr_recall";
inline constexpr const char* kTable3Header =
    "head,eps_total,lambda,eps_task,eps_clip,attack,dense_metric,dense_clean,dense_adv,recall_clean,recall_adv,"
    "asr_dense,asr_recall";

}  // namespace mtadv
