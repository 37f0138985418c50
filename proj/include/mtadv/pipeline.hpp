#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtadv/config.hpp"

namespace mtadv {

// Run directory layout:
//   config.json                  resolved configuration
//   dataset/                     spec.json, {train,val,test}.jsonl, images/, masks/
//   models/                      clip, <head>, control_<head> checkpoints (.bin + .json)
//   attacks/bank.json            text bank captions and temperature
//   attacks/diagnostics.json     gradient-conflict report per head
//   attacks/clean/<id>.json      clean outcomes
//   attacks/<name>/spec.json     attack spec
//   attacks/<name>/<id>.json     per-sample record (budgets, audit, traces, outcomes)
//   attacks/<name>/<id>.png      adversarial image
//   attacks/<name>/<id>.deltas   int16 deltas (see delta_dump_layout)
//   reports/table{1,2,3}.csv, reports/report.json, reports/triptychs/*.png
//   run_record.json              wall-clock and environment (not deterministic)
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.json"; }
  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path attacks() const { return root / "attacks"; }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path record() const { return root / "run_record.json"; }
};

struct CommandOptions {
  bool overwrite = false;
  bool resume = false;
  std::function<void(const std::string&)> log;
};

struct AttackSummary {
  int attacks = 0;
  int samples_run = 0;
  int samples_skipped = 0;
  int partial = 0;
  int failed = 0;
  std::vector<std::string> warnings;
};

struct ReportSummary {
  std::vector<std::string> missing;  // attack rows with gaps
  int triptychs = 0;
};

/// Raw int16 little-endian planes task, clip, composed, each H*W*C in HWC
/// order; value = round(delta * scale), scale recorded in the sample JSON.
inline constexpr const char* kDeltaDumpLayout = "int16le planes [task, clip, composed], HWC, delta = value / scale";

void cmd_generate(const RunConfig& cfg, const CommandOptions& opt);
void cmd_train(const RunConfig& cfg, const CommandOptions& opt);
AttackSummary cmd_attack(const RunConfig& cfg, const CommandOptions& opt);
ReportSummary cmd_report(const RunConfig& cfg, const CommandOptions& opt);

/// generate, train, attack and report. Returns the attack summary.
AttackSummary cmd_all(const RunConfig& cfg, const CommandOptions& opt);

}  // namespace mtadv
