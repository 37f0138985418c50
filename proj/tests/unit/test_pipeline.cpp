#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtadv/errors.hpp"
#include "mtadv/io.hpp"
#include "mtadv/pipeline.hpp"

using namespace mtadv;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const std::string& name) {
  RunConfig c = run_config_from_json({
      {"seed", 5},
      {"dataset", {{"train_count", 64}, {"val_count", 8}, {"test_count", 4}}},
      {"training",
       {{"clip", {{"epochs", 1}, {"gate", 0.0}}},
        {"dense", {{"epochs", 1}, {"gate", 0.0}}},
        {"control", {{"epochs", 1}, {"gate", 0.0}}}}},
      {"attack",
       {{"iterations", 2},
        {"compute_matched", false},
        {"sweep", {{{"eps_total", "8/255"}, {"lambda", 3}}}},
        {"orders", {{{"eps_task", "6/255"}, {"eps_clip", "2/255"}}}}}},
      {"evaluation", {{"triptychs", 4}}},
  });
  c.output_dir = fs::temp_directory_path() / ("mtadv-pipeline-" + name);
  fs::remove_all(c.output_dir);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CommandOptions with(bool overwrite, bool resume) {
  CommandOptions o;
  o.overwrite = overwrite;
  o.resume = resume;
  return o;
}

}  // namespace

TEST(Pipeline, GenerateRefusesToClobberAndOverwriteIsDeterministic) {
  const RunConfig cfg = tiny_run("generate");
  cmd_generate(cfg, {});
  const std::string first = tree_checksum(RunPaths{cfg.output_dir}.dataset());
  EXPECT_THROW(cmd_generate(cfg, {}), ConfigError);
  cmd_generate(cfg, with(true, false));
  EXPECT_EQ(tree_checksum(RunPaths{cfg.output_dir}.dataset()), first);
  fs::remove_all(cfg.output_dir);
}

TEST(Pipeline, CommandsNeedTheirInputs) {
  const RunConfig cfg = tiny_run("inputs");
  EXPECT_THROW(cmd_train(cfg, {}), ConfigError);
  cmd_generate(cfg, {});
  EXPECT_THROW(cmd_attack(cfg, {}), ConfigError);
  EXPECT_THROW(cmd_report(cfg, {}), ConfigError);
  fs::remove_all(cfg.output_dir);
}

TEST(Pipeline, EndToEndResumeAndReproducibleReports) {
  const RunConfig cfg = tiny_run("e2e");
  const RunPaths paths{cfg.output_dir};
  const AttackSummary sum = cmd_all(cfg, {});
  EXPECT_EQ(sum.failed, 0);
  EXPECT_EQ(sum.samples_run, sum.attacks * cfg.dataset.test_count);
  for (const char* f : {"table1.csv", "table2.csv", "table3.csv", "report.json"})
    EXPECT_TRUE(fs::exists(paths.reports() / f)) << f;
  EXPECT_TRUE(fs::exists(paths.record()));

  int triptychs = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(paths.reports() / "triptychs")) ++triptychs;
  EXPECT_EQ(triptychs, cfg.evaluation.triptychs);

  EXPECT_THROW(cmd_attack(cfg, {}), ConfigError);
  const AttackSummary resumed = cmd_attack(cfg, with(false, true));
  EXPECT_EQ(resumed.samples_run, 0);
  EXPECT_EQ(resumed.samples_skipped, sum.samples_run);

  const std::string t1 = slurp(paths.reports() / "table1.csv");
  const std::string rep = slurp(paths.reports() / "report.json");
  cmd_report(cfg, {});
  EXPECT_EQ(slurp(paths.reports() / "table1.csv"), t1);
  EXPECT_EQ(slurp(paths.reports() / "report.json"), rep);

  const auto report = nlohmann::json::parse(slurp(paths.reports() / "report.json"));
  EXPECT_EQ(report["diagnostics"]["budget"]["violations"].get<int>(), 0);
  EXPECT_TRUE(report["missing"].empty());
  fs::remove_all(cfg.output_dir);
}

TEST(Pipeline, EmptyPlanWarnsAndRunsNothing) {
  RunConfig cfg = tiny_run("empty");
  cfg.attack.sweep.clear();
  cfg.attack.orders.clear();
  cmd_generate(cfg, {});
  cmd_train(cfg, {});
  const AttackSummary sum = cmd_attack(cfg, {});
  EXPECT_EQ(sum.attacks, 0);
  ASSERT_FALSE(sum.warnings.empty());
  EXPECT_NE(sum.warnings[0].find("empty"), std::string::npos);
  fs::remove_all(cfg.output_dir);
}

TEST(Pipeline, TrainingGateFailureAborts) {
  RunConfig cfg = tiny_run("gate");
  cfg.clip.gate = 1.01;
  cmd_generate(cfg, {});
  EXPECT_THROW(cmd_train(cfg, {}), GateFailure);
  fs::remove_all(cfg.output_dir);
}

TEST(Pipeline, OutputsDoNotDependOnRunDirectoryOrWorkers) {
  const RunConfig a = tiny_run("place-a");
  RunConfig b = tiny_run("place-b");
  b.workers = 3;
  cmd_all(a, {});
  cmd_all(b, {});
  int compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.output_dir)) {
    const fs::path rel = fs::relative(e.path(), a.output_dir);
    const std::string ext = e.path().extension().string();
    if (!e.is_regular_file() || (ext != ".json" && ext != ".csv") || rel == "run_record.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(b.output_dir / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 20);
  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
}
