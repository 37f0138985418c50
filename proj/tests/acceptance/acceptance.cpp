#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mtadv/attacks.hpp"
#include "mtadv/config.hpp"
#include "mtadv/errors.hpp"
#include "mtadv/io.hpp"
#include "mtadv/metrics.hpp"
#include "mtadv/objectives.hpp"
#include "mtadv/pipeline.hpp"
#include "mtadv/report.hpp"

using namespace mtadv;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Verdict& v) {
  std::printf("%s criterion %d: %s (%s)\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), v.detail.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Models {
  Dataset ds;
  ClipModel<double> clip;
  DenseModel<double> det;
  DenseModel<double> seg;
  TextBank<double> bank;
  bool trained = false;
};

Models load_models(const RunPaths& paths, bool run_ok) {
  Models m;
  if (run_ok) {
    m.ds = load_dataset(paths.dataset());
    m.clip = load_clip_checkpoint(paths.models() / "clip.bin").cast<double>();
    m.det = load_dense_checkpoint(paths.models() / "detection.bin").cast<double>();
    m.seg = load_dense_checkpoint(paths.models() / "segmentation.bin").cast<double>();
    m.trained = true;
  } else {
    DatasetSpec s;
    s.train_count = 4;
    s.val_count = 2;
    s.test_count = 20;
    m.ds = generate_dataset(s);
    m.clip = ClipModel<double>::init(1);
    m.det = DenseModel<double>::init(HeadKind::detection, 2);
    m.seg = DenseModel<double>::init(HeadKind::segmentation, 3);
  }
  m.bank = build_text_bank(m.clip, unique_captions(m.ds.test));
  return m;
}

// 1: every persisted attack record passes its full-precision budget audit.
Verdict budget_invariants(const RunPaths& paths, const RunConfig& cfg, const Dataset& ds) {
  const double tol = 1e-9;
  long records = 0, violations = 0, missing = 0;
  double worst = 0.0;
  for (const AttackSpec& spec : cfg.expand_attacks()) {
    const fs::path dir = paths.attacks() / spec.name;
    for (const auto& smp : ds.test) {
      const fs::path rec = dir / (smp.id + ".json");
      if (!fs::exists(rec)) {
        ++missing;
        continue;
      }
      const json j = json::parse(slurp(rec));
      if (j.contains("error")) {
        ++missing;
        continue;
      }
      const BudgetAudit a = budget_audit_from_json(j.at("audit"));
      ++records;
      worst = std::max(worst, a.linf_composed - spec.budget.eps_total);
      const bool ok = a.feasible && a.reconstructs && a.within_budget &&
                      a.linf_composed <= spec.budget.eps_total + tol &&
                      a.linf_task <= (spec.strategy == Strategy::single_task || spec.strategy == Strategy::joint
                                          ? spec.budget.eps_total
                                          : spec.budget.eps_task) + tol &&
                      a.linf_clip <= (spec.strategy == Strategy::single_task ? spec.budget.eps_total
                                                                             : spec.budget.eps_clip) + tol;
      if (!ok) ++violations;
    }
  }
  Verdict v;
  v.pass = records > 0 && violations == 0 && missing == 0;
  v.detail = std::to_string(records) + " records, " + std::to_string(violations) + " violations, " +
             std::to_string(missing) + " missing, max(linf - eps_total) = " + fmt("%.3g", worst);
  return v;
}

template <class F>
int fd_mismatches(F&& f, const BasicImage<double>& x, Rng& rng, int coords, double& worst) {
  const double h = 1e-4;
  const LossGrad<double> lg = f(x, true);
  int bad = 0;
  for (int k = 0; k < coords; ++k) {
    const std::size_t i = rng.below(x.size());
    BasicImage<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (f(xp, false).loss - f(xm, false).loss) / (2 * h);
    const double an = lg.grad[i];
    const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, rel);
    bad += rel > 1e-3;
  }
  return bad;
}

// 2: analytic input gradients agree with central differences.
Verdict gradient_check(const Models& m) {
  const auto t0 = Clock::now();
  Rng rng(derive_seed(0, "acceptance:fd"));
  int bad = 0, checked = 0;
  double worst = 0.0;
  const int samples = std::min<int>(10, static_cast<int>(m.ds.test.size()));
  for (int s = 0; s < samples; ++s) {
    const SyntheticSample& smp = m.ds.test[s];
    const BasicImage<double> clean = smp.image.cast<double>();
    BasicImage<double> x = clean;
    for (auto& v : x) v = std::clamp(v + rng.uniform(-4.0 / 255, 4.0 / 255), 0.0, 1.0);
    for (const DenseModel<double>* model : {&m.det, &m.seg}) {
      const TaskTarget target = task_target(smp, model->kind());
      bad += fd_mismatches([&](const BasicImage<double>& img, bool g) { return task_objective(*model, img, target, g); },
                           x, rng, 20, worst);
      checked += 20;
    }
    const ClipKlObjective<double> kl(m.clip, m.bank, clean, m.clip.temperature());
    bad += fd_mismatches([&](const BasicImage<double>& img, bool g) { return kl(img, g); }, x, rng, 20, worst);
    checked += 20;
  }
  const double secs = seconds_since(t0);
  Verdict v;
  v.pass = bad == 0 && secs < 30.0 && samples == 10;
  v.detail = std::to_string(checked) + " coordinates over " + std::to_string(samples) + " samples x 3 models" +
             (m.trained ? "" : " (untrained fallback)") + ", " + std::to_string(bad) + " above 1e-3, worst " +
             fmt("%.2e", worst) + ", " + fmt("%.1f", secs) + " s";
  return v;
}

// 3: independent oracles for projection, Recall@1, mIoU and ASR.
Verdict oracle_equivalences() {
  Rng rng(derive_seed(0, "acceptance:oracles"));
  std::vector<std::string> failed;

  bool proj_ok = true;
  for (int trial = 0; trial < 100 && proj_ok; ++trial) {
    Perturbation<double> p{BasicImage<double>(Shape{8, 8, 3}), 1.0, StageTag::task};
    for (auto& v : p.delta) v = rng.uniform(-0.2, 0.2);
    const double eps = rng.uniform(0.0, 0.1);
    const auto out = project_linf(p, eps);
    for (std::size_t i = 0; i < p.delta.size(); ++i) {
      const double o = p.delta[i] > eps ? eps : (p.delta[i] < -eps ? -eps : p.delta[i]);
      proj_ok &= out.delta[i] == o;
    }
  }
  if (!proj_ok) failed.push_back("project_linf");

  nn::Mat<double> sim(100, 23);
  std::vector<int> correct(100);
  for (int r = 0; r < 100; ++r) {
    for (int c = 0; c < 23; ++c) sim(r, c) = std::round(rng.uniform(-1, 1) * 6) / 6;
    correct[r] = static_cast<int>(rng.below(23));
  }
  int hits = 0;
  for (int r = 0; r < 100; ++r) {
    int best = 0;
    for (int c = 1; c < 23; ++c)
      if (sim(r, c) > sim(r, best)) best = c;
    hits += best == correct[r];
  }
  if (recall_at_1(sim, correct) != hits / 100.0) failed.push_back("recall_at_1");

  bool miou_ok = true;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> pred(500), gt(500);
    for (auto& v : pred) v = static_cast<int>(rng.below(kNumClasses));
    for (auto& v : gt) v = static_cast<int>(rng.below(5));
    double sum = 0;
    int n = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      std::set<int> p, g, u, in;
      for (int i = 0; i < 500; ++i) {
        if (pred[i] == c) p.insert(i);
        if (gt[i] == c) g.insert(i);
      }
      std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::inserter(u, u.end()));
      std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(in, in.end()));
      if (u.empty()) continue;
      sum += static_cast<double>(in.size()) / static_cast<double>(u.size());
      ++n;
    }
    miou_ok &= miou(pred, gt) == sum / n;
  }
  if (!miou_ok) failed.push_back("miou");

  const double a1 = round_decimal(asr(24.0, 5.1), 1), a2 = round_decimal(asr(46.24, 0.24), 1);
  if (a1 != 78.8 || a2 != 99.5) failed.push_back("asr");

  Verdict v;
  v.pass = failed.empty();
  v.detail = "ASR(24.0, 5.1) = " + fmt("%.1f", a1) + ", ASR(46.24, 0.24) = " + fmt("%.1f", a2);
  for (const auto& f : failed) v.detail += ", mismatch in " + f;
  return v;
}

// 4: degenerate strategies reproduce dense PGD bit for bit.
Verdict degeneracies(const Models& m, const RunConfig& cfg) {
  const AttackPlan& p = cfg.attack;
  int checked = 0, mismatched = 0;
  for (const DenseModel<double>* model : {&m.det, &m.seg}) {
    const AttackContext<double> ctx{model, &m.clip, &m.bank, m.clip.temperature()};
    AttackSpec pgd;
    pgd.name = "pgd";
    pgd.strategy = Strategy::single_task;
    pgd.target = AttackTarget::dense;
    pgd.head = model->kind();
    pgd.budget = BudgetSplit::from_parts(p.eps_total, 0.0);
    pgd.stage1.alpha = pgd.stage2.alpha = p.alpha;
    pgd.stage1.iterations = pgd.stage2.iterations = p.iterations;
    pgd.stage1.seed = pgd.stage2.seed = derive_seed(cfg.seed, "acceptance:degeneracy");
    pgd.stage2.init_mode = InitMode::random_uniform;

    AttackSpec joint = pgd;
    joint.strategy = Strategy::joint;
    joint.joint_weight = 0.0;
    AttackSpec mt = pgd;
    mt.strategy = Strategy::mt_advclip;

    for (int s = 0; s < 3 && s < static_cast<int>(m.ds.test.size()); ++s) {
      const auto& smp = m.ds.test[s];
      const auto ref = run_attack(pgd, ctx, smp);
      for (const AttackSpec* spec : {&joint, &mt}) {
        const auto r = run_attack(*spec, ctx, smp);
        ++checked;
        mismatched += !(r.adversarial == ref.adversarial && r.delta_composed.delta == ref.delta_composed.delta);
      }
    }
  }
  Verdict v;
  v.pass = checked > 0 && mismatched == 0;
  v.detail = std::to_string(checked) + " comparisons (joint w=0 and MT-AdvCLIP eps_clip=0 vs dense PGD, " +
             std::string(m.trained ? "trained" : "untrained") + " models), " + std::to_string(mismatched) +
             " mismatched";
  return v;
}

struct Row {
  bool present = false;
  std::optional<double> recall, cell_map, miou;
  std::optional<double> dense(HeadKind h) const { return h == HeadKind::detection ? cell_map : miou; }
};

Row find_row(const json& rep, const std::string& name) {
  Row r;
  for (const auto& row : rep.at("rows")) {
    if (row.at("attack").at("name") != name) continue;
    if (!row.at("complete").get<bool>()) return r;
    const json& a = row.at("asr");
    auto get = [&](const char* k) { return a.contains(k) && !a[k].is_null() ? std::optional<double>(a[k]) : std::nullopt; };
    r.present = true;
    r.recall = get("recall_at_1");
    r.cell_map = get("cell_map");
    r.miou = get("miou");
  }
  return r;
}

std::string show(const std::optional<double>& v) { return v ? fmt("%.1f", *v) : std::string("n/a"); }

bool at_least(const std::optional<double>& v, double t) { return v && *v >= t; }
bool at_most(const std::optional<double>& v, double t) { return v && *v <= t; }

double min_over_tasks(const Row& r, HeadKind h) {
  if (!r.recall || !r.dense(h)) return -1e9;
  return std::min(*r.recall, *r.dense(h));
}

// 5: one-sided baselines against MT-AdvCLIP, gated on the detection head.
Verdict table1_trend(const json& rep, const RunConfig& cfg, double runtime, std::string& seg_detail) {
  const AttackPlan& p = cfg.attack;
  auto check_head = [&](HeadKind h, std::string& detail) {
    const std::string ht = to_string(h);
    const Row dense = find_row(rep, "pgd_dense." + ht);
    const Row clip = find_row(rep, "pgd_clip");
    const Row joint = find_row(rep, "joint." + ht);
    const Row mt = find_row(rep, staged_attack_name(Strategy::mt_advclip, h, split_budget(p.eps_total, p.lambda)));
    const bool a = at_least(dense.dense(h), 80.0) && at_most(dense.recall, 40.0);
    const bool b = at_least(clip.recall, 80.0) && at_most(clip.dense(h), 40.0);
    bool c = at_least(mt.dense(h), 50.0) && at_least(mt.recall, 80.0);
    const double mt_min = min_over_tasks(mt, h);
    double best_baseline = -1e9;
    for (const std::string& n : std::vector<std::string>{"pgd_dense." + ht, "pgd_clip", "joint." + ht}) {
      const Row r = find_row(rep, n);
      if (!r.present) {
        c = false;
        continue;
      }
      best_baseline = std::max(best_baseline, min_over_tasks(r, h));
    }
    c = c && mt_min > best_baseline;
    std::string matched;
    if (p.compute_matched) {
      double best = -1e9;
      for (const std::string& n : std::vector<std::string>{"pgd_dense." + ht + ".20it", "pgd_clip.20it", "joint." + ht + ".20it"})
        best = std::max(best, min_over_tasks(find_row(rep, n), h));
      matched = "; 20-iteration baselines best min " + fmt("%.1f", best);
    }
    detail = ht + ": (a) dense PGD " + show(dense.dense(h)) + "/" + show(dense.recall) + (a ? " ok" : " FAIL") +
             "; (b) CLIP PGD " + show(clip.dense(h)) + "/" + show(clip.recall) + (b ? " ok" : " FAIL") +
             "; (c) MT-AdvCLIP " + show(mt.dense(h)) + "/" + show(mt.recall) + ", min " + fmt("%.1f", mt_min) +
             " vs best baseline min " + fmt("%.1f", best_baseline) + (c ? " ok" : " FAIL") + "; joint " +
             show(joint.dense(h)) + "/" + show(joint.recall) + matched + " [dense/retrieval ASR %]";
    return a && b && c;
  };
  Verdict v;
  const bool det = check_head(HeadKind::detection, v.detail);
  check_head(HeadKind::segmentation, seg_detail);
  const bool fast = runtime <= 600.0;
  v.pass = det && fast;
  v.detail += "; pipeline " + fmt("%.0f", runtime) + " s" + (fast ? "" : " > 600 s");
  return v;
}

// 6: task-first ordering keeps far more retrieval damage than CLIP-first.
Verdict table2_trend(const json& rep, std::string& seg_detail) {
  auto gap = [&](HeadKind h, std::string& detail) -> std::optional<double> {
    const BudgetSplit b = BudgetSplit::from_parts(6.0 / 255, 2.0 / 255);
    const Row fwd = find_row(rep, staged_attack_name(Strategy::mt_advclip, h, b));
    const Row rev = find_row(rep, staged_attack_name(Strategy::order_reversed, h, b));
    detail = to_string(h) + ": task->CLIP retrieval ASR " + show(fwd.recall) + ", CLIP->task " + show(rev.recall);
    if (!fwd.recall || !rev.recall) return std::nullopt;
    detail += ", gap " + fmt("%.1f", *fwd.recall - *rev.recall) + " pp";
    return *fwd.recall - *rev.recall;
  };
  Verdict v;
  const auto g = gap(HeadKind::detection, v.detail);
  gap(HeadKind::segmentation, seg_detail);
  v.pass = g && *g >= 20.0;
  v.detail += " (need >= 20)";
  return v;
}

// 7: dense ASR grows with the task share of a fixed total budget.
Verdict table3_trend(const json& rep, std::string& seg_detail) {
  auto series = [&](HeadKind h, std::string& detail) {
    std::vector<double> asr;
    detail = to_string(h) + ": dense ASR at eps_task 2/4/6 of 8/255 =";
    bool complete = true;
    for (int task : {2, 4, 6}) {
      const Row r = find_row(rep, staged_attack_name(Strategy::mt_advclip, h,
                                                     BudgetSplit::from_parts(task / 255.0, (8 - task) / 255.0)));
      detail += " " + show(r.dense(h));
      if (!r.dense(h)) complete = false;
      else asr.push_back(*r.dense(h));
    }
    int inversions = 0;
    bool small = true;
    for (std::size_t i = 1; i < asr.size(); ++i)
      if (asr[i] < asr[i - 1]) {
        ++inversions;
        small &= asr[i - 1] - asr[i] <= 2.0;
      }
    return complete && (inversions == 0 || (inversions == 1 && small));
  };
  Verdict v;
  v.pass = series(HeadKind::detection, v.detail);
  series(HeadKind::segmentation, seg_detail);
  return v;
}

// 8: KL and distribution properties on random and model-produced distributions.
Verdict kl_properties(const Models& m) {
  Rng rng(derive_seed(0, "acceptance:kl"));
  int negative = 0, nonzero_self = 0, bad_sum = 0, pairs = 0, rows = 0;
  double worst_self = 0.0, worst_sum = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<double> a(n), b(n);
    for (auto& v : a) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    const double t = rng.uniform(0.01, 1.0);
    const auto p = softmax_distribution(a, t), q = softmax_distribution(b, t);
    negative += kl_divergence(p, q) < 0.0;
    const double self = kl_divergence(p, p);
    worst_self = std::max(worst_self, std::abs(self));
    nonzero_self += std::abs(self) > 1e-12;
    for (const auto* d : {&p, &q}) {
      double s = 0;
      for (double v : d->probs) s += v;
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      bad_sum += std::abs(s - 1.0) > 1e-9;
      ++rows;
    }
    ++pairs;
  }
  for (const auto& smp : m.ds.test) {
    const auto d = clip_distribution(m.clip, smp.image.cast<double>(), m.bank, m.clip.temperature());
    double s = 0;
    for (double v : d.probs) s += v;
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    bad_sum += std::abs(s - 1.0) > 1e-9;
    ++rows;
  }
  Verdict v;
  v.pass = negative == 0 && nonzero_self == 0 && bad_sum == 0;
  v.detail = std::to_string(pairs) + " pairs: " + std::to_string(negative) + " negative KL, max |KL(p||p)| " +
             fmt("%.1e", worst_self) + ", " + std::to_string(rows) + " rows with max |sum - 1| " + fmt("%.1e", worst_sum);
  return v;
}

std::vector<fs::path> report_files(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    const fs::path rel = fs::relative(e.path(), root);
    if ((ext == ".csv" || ext == ".json") && rel != "run_record.json") out.push_back(rel);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// 9: two runs of `all` give byte-identical CSV/JSON outputs.
Verdict determinism(const fs::path& work) {
  RunConfig cfg = run_config_from_json({
      {"seed", 11},
      {"dataset", {{"train_count", 300}, {"val_count", 20}, {"test_count", 6}}},
      {"training",
       {{"clip", {{"epochs", 2}, {"gate", 0.0}}},
        {"dense", {{"epochs", 2}, {"gate", 0.0}}},
        {"control", {{"epochs", 1}, {"gate", 0.0}}}}},
      {"attack",
       {{"iterations", 3},
        {"sweep", {{{"eps_total", "8/255"}, {"lambda", 3}}, {{"eps_total", "8/255"}, {"lambda", 1}}}},
        {"orders", {{{"eps_task", "6/255"}, {"eps_clip", "2/255"}}}}}},
      {"evaluation", {{"triptychs", 2}}},
  });
  CommandOptions opt;
  opt.overwrite = true;
  std::vector<fs::path> roots = {work / "determinism-a", work / "determinism-b"};
  for (const auto& r : roots) {
    fs::remove_all(r);
    cfg.output_dir = r;
    cmd_all(cfg, opt);
  }
  const auto fa = report_files(roots[0]), fb = report_files(roots[1]);
  int differing = 0;
  for (const auto& f : fa)
    if (std::find(fb.begin(), fb.end(), f) == fb.end() || slurp(roots[0] / f) != slurp(roots[1] / f)) ++differing;
  Verdict v;
  v.pass = !fa.empty() && fa == fb && differing == 0 && fs::exists(roots[0] / "reports" / "table1.csv");
  v.detail = std::to_string(fa.size()) + " CSV/JSON files compared (reduced config), " + std::to_string(differing) +
             " differ";
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite for the multi-task adversarial pipeline"};
  fs::path work = "acceptance-work";
  std::string config_path;
  bool reuse = false;
  app.add_option("--work", work, "Scratch directory for the runs");
  app.add_option("--config", config_path, "Run configuration (default: built-in defaults)")->check(CLI::ExistingFile);
  app.add_flag("--reuse", reuse, "Reuse a completed default run in the work directory");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg = config_path.empty() ? default_run_config() : load_run_config(config_path);
  cfg.output_dir = work / "default";
  const RunPaths paths{cfg.output_dir};

  std::optional<double> recorded;
  std::string record_text;
  if (reuse && fs::exists(paths.record())) {
    record_text = slurp(paths.record());
    const json rec = json::parse(record_text);
    if (rec.contains("wall_clock_seconds") && rec["wall_clock_seconds"].contains("total"))
      recorded = rec["wall_clock_seconds"]["total"].get<double>();
  }

  bool run_ok = true;
  std::string run_error;
  const auto t0 = Clock::now();
  try {
    CommandOptions opt;
    opt.overwrite = !reuse;
    opt.resume = reuse;
    opt.log = [](const std::string& m) { std::fprintf(stderr, "[run] %s\n", m.c_str()); };
    const AttackSummary sum = cmd_all(cfg, opt);
    if (sum.failed > 0) run_error = std::to_string(sum.failed) + " failed samples";
  } catch (const std::exception& e) {
    run_ok = false;
    run_error = e.what();
  }
  const double runtime = recorded.value_or(seconds_since(t0));
  if (recorded) std::ofstream(paths.record(), std::ios::binary) << record_text;
  if (!run_ok) std::printf("default run failed: %s\n", run_error.c_str());

  json rep = json::object();
  if (run_ok) rep = json::parse(slurp(paths.reports() / "report.json"));
  const Models models = load_models(paths, run_ok);

  auto guarded = [&](int id, const std::string& title, const std::function<Verdict()>& f) {
    try {
      report(id, title, f());
    } catch (const std::exception& e) {
      report(id, title, {false, std::string("error: ") + e.what()});
    }
  };
  auto needs_run = [&](const std::function<Verdict()>& f) {
    return [&, f] { return run_ok ? f() : Verdict{false, "default run failed: " + run_error}; };
  };

  std::string seg5, seg6, seg7;
  guarded(1, "budget invariants", needs_run([&] { return budget_invariants(paths, cfg, models.ds); }));
  guarded(2, "gradient correctness", [&] { return gradient_check(models); });
  guarded(3, "oracle equivalences", [&] { return oracle_equivalences(); });
  guarded(4, "degeneracy identities", [&] { return degeneracies(models, cfg); });
  guarded(5, "baseline trade-off trend", needs_run([&] { return table1_trend(rep, cfg, runtime, seg5); }));
  if (!seg5.empty()) std::printf("    info %s\n", seg5.c_str());
  guarded(6, "perturbation order trend", needs_run([&] { return table2_trend(rep, seg6); }));
  if (!seg6.empty()) std::printf("    info %s\n", seg6.c_str());
  guarded(7, "budget split trend", needs_run([&] { return table3_trend(rep, seg7); }));
  if (!seg7.empty()) std::printf("    info %s\n", seg7.c_str());
  guarded(8, "KL and distribution properties", [&] { return kl_properties(models); });
  guarded(9, "determinism", [&] { return determinism(work); });

  std::printf("%d of 9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
