#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mtadv/errors.hpp"
#include "mtadv/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kRuntime = 1, kConfig = 2, kGate = 3, kPartial = 4 };

int fail(int code, const char* tag, std::string msg) {
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  std::cerr << "error[" << tag << "] " << msg << std::endl;
  return code;
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  bool overwrite = false;
  bool resume = false;
  bool quiet = false;
};

void add_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration (defaults when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "master seed, overrides the config");
  cmd->add_option("--workers", f.workers, "worker threads for per-sample parallelism")->check(CLI::PositiveNumber);
  cmd->add_option("--out", f.out, "run directory, overrides the config");
  cmd->add_flag("--overwrite", f.overwrite, "replace existing artifacts");
  cmd->add_flag("--resume", f.resume, "keep finished artifacts and skip completed samples");
  cmd->add_flag("-q,--quiet", f.quiet, "no progress output");
}

void print_attack_summary(const mtadv::AttackSummary& s) {
  std::cout << "attacks=" << s.attacks << " samples_run=" << s.samples_run << " samples_skipped=" << s.samples_skipped
            << " partial=" << s.partial << " failed=" << s.failed << " warnings=" << s.warnings.size() << std::endl;
}

int attack_exit(const mtadv::AttackSummary& s) {
  if (s.partial + s.failed == 0) return kOk;
  return fail(kPartial, "PARTIAL_ATTACK",
              std::to_string(s.partial) + " partial and " + std::to_string(s.failed) + " failed attack samples");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage multi-task adversarial attacks on a toy CLIP testbed"};
  app.require_subcommand(1);
  Flags flags;
  for (const char* name : {"generate", "train", "attack", "report", "all"}) add_flags(app.add_subcommand(name), flags);
  app.get_subcommand("generate")->description("generate the synthetic dataset");
  app.get_subcommand("train")->description("train the toy CLIP and its dense derivatives");
  app.get_subcommand("attack")->description("run every configured attack on the test split");
  app.get_subcommand("report")->description("write the table replicas, report.json and triptychs");
  app.get_subcommand("all")->description("generate, train, attack and report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, "USAGE", e.what());
  }

  try {
    mtadv::RunConfig cfg = flags.config.empty() ? mtadv::default_run_config() : mtadv::load_run_config(flags.config);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.workers) cfg.workers = *flags.workers;
    if (!flags.out.empty()) cfg.output_dir = flags.out;

    mtadv::CommandOptions opt;
    opt.overwrite = flags.overwrite;
    opt.resume = flags.resume;
    if (!flags.quiet) opt.log = [](const std::string& m) { std::cerr << "[mtadvclip] " << m << std::endl; };

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "generate") {
      mtadv::cmd_generate(cfg, opt);
    } else if (cmd == "train") {
      mtadv::cmd_train(cfg, opt);
    } else if (cmd == "attack") {
      const auto s = mtadv::cmd_attack(cfg, opt);
      print_attack_summary(s);
      return attack_exit(s);
    } else if (cmd == "report") {
      const auto r = mtadv::cmd_report(cfg, opt);
      std::cout << "report=" << (cfg.output_dir / "reports").string() << " triptychs=" << r.triptychs
                << " missing=" << r.missing.size() << std::endl;
    } else {
      const auto s = mtadv::cmd_all(cfg, opt);
      print_attack_summary(s);
      return attack_exit(s);
    }
    return kOk;
  } catch (const mtadv::ConfigError& e) {
    return fail(kConfig, "CONFIG", e.what());
  } catch (const mtadv::GateFailure& e) {
    return fail(kGate, "GATE", e.what());
  } catch (const std::exception& e) {
    return fail(kRuntime, "RUNTIME", e.what());
  }
}
