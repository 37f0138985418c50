#include "mtadv/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <thread>

#include "mtadv/errors.hpp"
#include "mtadv/io.hpp"
#include "mtadv/png_io.hpp"
#include "mtadv/report.hpp"

namespace mtadv {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

class Logger {
 public:
  explicit Logger(const CommandOptions& opt) : fn_(opt.log) {}
  void operator()(const std::string& msg) const {
    if (!fn_) return;
    std::lock_guard<std::mutex> lock(mu_);
    fn_(msg);
  }

 private:
  std::function<void(const std::string&)> fn_;
  mutable std::mutex mu_;
};

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

void write_json(const fs::path& p, const json& j) { write_file_atomic(p, j.dump(2) + "\n"); }

bool nonempty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Runs f(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// collected and the one with the lowest index is rethrown after joining.
template <class F>
void parallel_for(int workers, std::size_t n, F&& f) {
  const std::size_t threads = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  std::vector<std::exception_ptr> errors(n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string control_name(HeadKind h) { return "control_" + to_string(h); }

fs::path checkpoint(const RunPaths& p, const std::string& name) { return p.models() / (name + ".bin"); }

Dataset need_dataset(const RunPaths& p) {
  if (!fs::exists(p.dataset() / "spec.json"))
    throw ConfigError("no dataset in " + p.dataset().string() + "; run 'generate' first");
  return load_dataset(p.dataset());
}

bool needs_control(const RunConfig& cfg) {
  if (cfg.attack.control) return true;
  return std::any_of(cfg.attack.extra.begin(), cfg.attack.extra.end(),
                     [](const AttackSpec& s) { return s.control_model; });
}

std::vector<HeadKind> dense_heads(const RunConfig& cfg) {
  std::vector<HeadKind> heads = cfg.attack.heads;
  for (const auto& s : cfg.attack.extra)
    if (s.strategy != Strategy::single_task || s.target == AttackTarget::dense)
      if (std::find(heads.begin(), heads.end(), s.head) == heads.end()) heads.push_back(s.head);
  return heads;
}

json config_echo(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output_dir");
  j.erase("workers");
  return j;
}

Png8 to_png(const BasicImage<double>& im) {
  Png8 p{im.width(), im.height(), im.channels(), std::vector<std::uint8_t>(im.size())};
  for (std::size_t i = 0; i < im.size(); ++i)
    p.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(im[i], 0.0, 1.0) * 255.0));
  return p;
}

double dump_scale(double max_abs) {
  if (!(max_abs > 0.0)) return 1.0;
  const int k = std::min(30, static_cast<int>(std::floor(std::log2(32767.0 / max_abs))));
  return std::ldexp(1.0, k);
}

template <typename T>
std::string delta_dump(const AttackResult<T>& r, double scale) {
  std::string out;
  const BasicImage<T>* planes[] = {&r.delta_task.delta, &r.delta_clip.delta, &r.delta_composed.delta};
  for (const auto* plane : planes)
    for (T v : *plane) {
      const auto q = static_cast<std::int16_t>(std::lround(static_cast<double>(v) * scale));
      const auto u = static_cast<std::uint16_t>(q);
      out.push_back(static_cast<char>(u & 0xff));
      out.push_back(static_cast<char>(u >> 8));
    }
  return out;
}

std::vector<double> read_delta_plane(const fs::path& p, std::size_t plane, std::size_t n, double scale) {
  const std::string bytes = read_file(p);
  if (bytes.size() != 3 * n * 2) throw std::runtime_error("delta dump " + p.string() + " has the wrong size");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = (plane * n + i) * 2;
    const auto u = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[o]) |
                                              (static_cast<unsigned char>(bytes[o + 1]) << 8));
    out[i] = static_cast<std::int16_t>(u) / scale;
  }
  return out;
}

template <typename T>
struct LoadedModels {
  ClipModel<T> clip;
  std::map<HeadKind, DenseModel<T>> heads;
  std::map<HeadKind, DenseModel<T>> controls;
};

template <typename T>
LoadedModels<T> load_models(const RunPaths& p, const RunConfig& cfg) {
  const fs::path clip_path = checkpoint(p, "clip");
  if (!fs::exists(clip_path)) throw ConfigError("no checkpoints in " + p.models().string() + "; run 'train' first");
  LoadedModels<T> m{load_clip_checkpoint(clip_path).template cast<T>(), {}, {}};
  for (HeadKind h : dense_heads(cfg)) {
    const fs::path hp = checkpoint(p, to_string(h));
    if (!fs::exists(hp)) throw ConfigError("missing checkpoint " + hp.string() + "; run 'train' first");
    m.heads.emplace(h, load_dense_checkpoint(hp).template cast<T>());
    if (needs_control(cfg)) {
      const fs::path cp = checkpoint(p, control_name(h));
      if (!fs::exists(cp)) throw ConfigError("missing checkpoint " + cp.string() + "; run 'train' first");
      m.controls.emplace(h, load_dense_checkpoint(cp).template cast<T>());
    }
  }
  return m;
}

template <typename T>
AttackSummary run_attacks(const RunConfig& cfg, const CommandOptions& opt) {
  const Logger log(opt);
  const RunPaths paths{cfg.output_dir};
  AttackSummary sum;
  const std::vector<AttackSpec> specs = cfg.expand_attacks();
  if (specs.empty()) {
    sum.warnings.push_back("the attack plan is empty (no sweep, orders or extra attacks); nothing to run");
    log("warning: " + sum.warnings.back());
    return sum;
  }
  if (nonempty_dir(paths.attacks())) {
    if (opt.overwrite) fs::remove_all(paths.attacks());
    else if (!opt.resume)
      throw ConfigError("attack artifacts exist in " + paths.attacks().string() + "; pass --resume or --overwrite");
  }

  const Dataset ds = need_dataset(paths);
  const std::vector<SyntheticSample>& test = ds.test;
  const LoadedModels<T> models = load_models<T>(paths, cfg);
  const TextBank<T> bank = build_text_bank(models.clip, unique_captions(test));
  const double temperature = models.clip.temperature();
  write_json(paths.attacks() / "bank.json", {{"captions", bank.captions}, {"temperature", temperature}});

  auto head_ptr = [](const std::map<HeadKind, DenseModel<T>>& m, HeadKind h) -> const DenseModel<T>* {
    const auto it = m.find(h);
    return it == m.end() ? nullptr : &it->second;
  };
  VictimModels<T> victims;
  victims.clip = &models.clip;
  victims.bank = &bank;
  victims.detection = head_ptr(models.heads, HeadKind::detection);
  victims.segmentation = head_ptr(models.heads, HeadKind::segmentation);
  victims.control_detection = head_ptr(models.controls, HeadKind::detection);
  victims.control_segmentation = head_ptr(models.controls, HeadKind::segmentation);

  log("evaluating " + std::to_string(test.size()) + " clean test images");
  parallel_for(cfg.workers, test.size(), [&](std::size_t i) {
    const BasicImage<T> x = test[i].image.template cast<T>();
    write_json(paths.attacks() / "clean" / (test[i].id + ".json"), to_json(evaluate_outcome(victims, test[i], x)));
  });

  json diag = json::object();
  for (const auto& [h, model] : models.heads) {
    const ConflictReport rep =
        gradient_conflict_report(model, models.clip, std::span<const SyntheticSample>(test), bank, temperature,
                                 cfg.evaluation.conflict_probe, derive_seed(cfg.seed, "conflict:" + to_string(h)));
    json entries = json::array();
    for (const auto& e : rep.entries)
      entries.push_back({{"id", e.sample_id}, {"cosine", e.cosine ? json(*e.cosine) : json(nullptr)}});
    diag[to_string(h)] = {{"probe_radius", cfg.evaluation.conflict_probe},
                          {"median", rep.median ? json(*rep.median) : json(nullptr)},
                          {"mean", rep.mean ? json(*rep.mean) : json(nullptr)},
                          {"entries", entries}};
  }
  write_json(paths.attacks() / "diagnostics.json", {{"gradient_conflict", diag}});

  const double tol = std::is_same_v<T, float> ? 1e-6 : 1e-9;
  for (const AttackSpec& spec : specs) {
    spec.validate();
    for (const auto& w : spec.warnings()) sum.warnings.push_back(w);
    const fs::path dir = paths.attacks() / spec.name;
    const json spec_json = to_json(spec);
    if (fs::exists(dir / "spec.json") && read_json(dir / "spec.json") != spec_json) {
      sum.warnings.push_back(spec.name + ": attack spec changed, rerunning every sample");
      fs::remove_all(dir);
    }
    write_json(dir / "spec.json", spec_json);

    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const fs::path rec = dir / (test[i].id + ".json");
      bool done = false;
      if (opt.resume && fs::exists(rec)) {
        try {
          done = !read_json(rec).contains("error");
        } catch (const std::exception&) {
          done = false;
        }
      }
      if (done) ++sum.samples_skipped;
      else pending.push_back(i);
    }
    ++sum.attacks;
    if (pending.empty()) {
      log(spec.name + ": all samples already done");
      continue;
    }

    AttackContext<T> ctx;
    ctx.clip_model = &models.clip;
    ctx.bank = &bank;
    ctx.temperature = temperature;
    const bool needs_task = !(spec.strategy == Strategy::single_task && spec.target == AttackTarget::clip);
    ctx.task_model = head_ptr(spec.control_model ? models.controls : models.heads, spec.head);
    if (needs_task && !ctx.task_model)
      throw ConfigError(spec.name + ": no " + std::string(spec.control_model ? "control " : "") + to_string(spec.head) +
                        " model was trained");

    const auto t0 = Clock::now();
    std::atomic<int> partial{0}, failed{0};
    parallel_for(cfg.workers, pending.size(), [&](std::size_t k) {
      const SyntheticSample& s = test[pending[k]];
      AttackRecord rec;
      rec.sample_id = s.id;
      json extra = json::object();
      try {
        const BasicImage<T> x = s.image.template cast<T>();
        const AttackResult<T> r = run_attack(spec, ctx, s);
        rec.partial = r.partial;
        rec.audit = audit_result(r, x, tol);
        rec.stages = r.stages;
        rec.cosines = r.cosines;
        rec.warnings = r.warnings;
        rec.outcome = evaluate_outcome(victims, s, r.adversarial);
        double max_abs = 0.0;
        for (const auto* d : {&r.delta_task.delta, &r.delta_clip.delta, &r.delta_composed.delta})
          max_abs = std::max(max_abs, static_cast<double>(linf_norm(*d)));
        const double scale = dump_scale(max_abs);
        write_file_atomic(dir / (s.id + ".deltas"), delta_dump(r, scale));
        write_png(dir / (s.id + ".png"), to_png(r.adversarial.template cast<double>()));
        extra = {{"budget",
                  {{"eps_task", r.delta_task.budget},
                   {"eps_clip", r.delta_clip.budget},
                   {"eps_total", r.delta_composed.budget}}},
                 {"adversarial_png", s.id + ".png"},
                 {"delta_dump", {{"file", s.id + ".deltas"}, {"scale", scale}, {"layout", kDeltaDumpLayout}}}};
        if (r.partial) ++partial;
      } catch (const std::exception& e) {
        rec = AttackRecord{};
        rec.sample_id = s.id;
        rec.error = e.what();
        ++failed;
        log(spec.name + ": " + e.what());
      }
      json j = to_json(rec);
      j.update(extra);
      write_json(dir / (s.id + ".json"), j);
    });
    sum.samples_run += static_cast<int>(pending.size());
    sum.partial += partial;
    sum.failed += failed;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f s", seconds_since(t0));
    log(spec.name + ": " + std::to_string(pending.size()) + " samples in " + buf +
        (partial || failed ? " (" + std::to_string(partial) + " partial, " + std::to_string(failed) + " failed)" : ""));
  }
  for (const auto& w : sum.warnings) log("warning: " + w);
  return sum;
}

void write_triptychs(const RunPaths& paths, const RunConfig& cfg, const std::vector<SyntheticSample>& test,
                     ReportSummary& out) {
  const fs::path dir = paths.reports() / "triptychs";
  fs::remove_all(dir);
  if (cfg.evaluation.triptychs == 0 || cfg.attack.heads.empty()) return;
  const HeadKind h = cfg.attack.heads.front();
  const BudgetSplit b = split_budget(cfg.attack.eps_total, cfg.attack.lambda);
  const fs::path adir = paths.attacks() / staged_attack_name(Strategy::mt_advclip, h, b);
  constexpr int kGap = 2;
  for (const auto& s : test) {
    if (out.triptychs >= cfg.evaluation.triptychs) break;
    const fs::path rec_path = adir / (s.id + ".json");
    if (!fs::exists(rec_path)) continue;
    const json rec = read_json(rec_path);
    if (rec.contains("error")) continue;
    const double scale = rec.at("delta_dump").at("scale").get<double>();
    const ImageTensor& x = s.image;
    const std::vector<double> d = read_delta_plane(adir / (s.id + ".deltas"), 2, x.size(), scale);
    const int w = x.width(), hgt = x.height(), c = x.channels();
    Png8 img{3 * w + 2 * kGap, hgt, c, std::vector<std::uint8_t>(static_cast<std::size_t>((3 * w + 2 * kGap) * hgt * c), 255)};
    const double amp = b.eps_total > 0.0 ? 0.5 / b.eps_total : 0.0;
    auto put = [&](int panel, int y, int xx, int ch, double v) {
      const std::size_t o = (static_cast<std::size_t>(y) * img.width + panel * (w + kGap) + xx) * c + ch;
      img.pixels[o] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };
    for (int y = 0; y < hgt; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t i = (static_cast<std::size_t>(y) * w + xx) * c + ch;
          put(0, y, xx, ch, x[i]);
          put(1, y, xx, ch, x[i] + d[i]);
          put(2, y, xx, ch, 0.5 + amp * d[i]);
        }
    fs::create_directories(dir);
    char name[32];
    std::snprintf(name, sizeof name, "%02d_", out.triptychs);
    write_png(dir / (name + s.id + ".png"), img);
    ++out.triptychs;
  }
}

json environment() {
  json j = {{"hardware_threads", std::thread::hardware_concurrency()}};
#if defined(__linux__)
  j["platform"] = "linux";
#elif defined(__APPLE__)
  j["platform"] = "macos";
#elif defined(_WIN32)
  j["platform"] = "windows";
#else
  j["platform"] = "unknown";
#endif
#if defined(__VERSION__)
  j["compiler"] = __VERSION__;
#endif
  return j;
}

void write_run_record(const RunPaths& paths, const RunConfig& cfg, const json& timings) {
  json artifacts = json::array();
  for (const fs::path& p : {paths.config(), paths.dataset(), paths.models(), paths.attacks(),
                            paths.reports() / "table1.csv", paths.reports() / "table2.csv",
                            paths.reports() / "table3.csv", paths.reports() / "report.json"})
    if (fs::exists(p)) artifacts.push_back(fs::relative(p, paths.root).generic_string());
  json record = {{"config", to_json(cfg)},
                 {"precision", to_string(cfg.precision)},
                 {"workers", cfg.workers},
                 {"environment", environment()},
                 {"wall_clock_seconds", timings},
                 {"artifacts", artifacts}};
  if (fs::exists(paths.reports() / "report.json")) record["report"] = read_json(paths.reports() / "report.json");
  write_json(paths.record(), record);
}

}  // namespace

void cmd_generate(const RunConfig& cfg, const CommandOptions& opt) {
  const Logger log(opt);
  const RunPaths paths{cfg.output_dir};
  const DatasetSpec spec = cfg.resolved_dataset();
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }
  if (nonempty_dir(paths.dataset())) {
    const fs::path sj = paths.dataset() / "spec.json";
    if (opt.resume && fs::exists(sj) && read_json(sj) == to_json(spec)) {
      log("dataset already generated");
      write_json(paths.config(), config_echo(cfg));
      return;
    }
    if (!opt.overwrite)
      throw ConfigError("dataset directory " + paths.dataset().string() + " already exists; pass --overwrite");
    fs::remove_all(paths.dataset());
  }
  fs::create_directories(paths.root);
  write_json(paths.config(), config_echo(cfg));
  log("generating dataset (" + std::to_string(spec.train_count) + " train, " + std::to_string(spec.val_count) +
      " val, " + std::to_string(spec.test_count) + " test)");
  save_dataset(generate_dataset(spec), paths.dataset());
}

void cmd_train(const RunConfig& cfg, const CommandOptions& opt) {
  const Logger log(opt);
  const RunPaths paths{cfg.output_dir};
  const Dataset ds = need_dataset(paths);
  if (nonempty_dir(paths.models())) {
    if (opt.overwrite) fs::remove_all(paths.models());
    else if (!opt.resume)
      throw ConfigError("checkpoints exist in " + paths.models().string() + "; pass --resume or --overwrite");
  }
  fs::create_directories(paths.models());
  const ProgressFn progress = [&log](const std::string& m) { log(m); };

  auto reusable = [&](const std::string& name, const TrainHyperparams& hp, const std::string& source) {
    const fs::path manifest = paths.models() / (name + ".json");
    if (!opt.resume || !fs::exists(checkpoint(paths, name)) || !fs::exists(manifest)) return false;
    const ModelInfo info = model_info_from_json(read_json(manifest));
    return info.hyperparams == to_json(hp) && (source.empty() || info.source_backbone_checksum == source ||
                                               info.frozen_backbone);
  };

  ClipModel<float> clip;
  if (reusable("clip", cfg.clip, "")) {
    log("reusing clip checkpoint");
    clip = load_clip_checkpoint(checkpoint(paths, "clip"));
  } else {
    log("training toy CLIP");
    clip = train_toy_clip(ds, cfg.clip, derive_seed(cfg.seed, "train-clip"), progress);
    save_checkpoint(checkpoint(paths, "clip"), clip);
  }
  const std::string clip_sum = backbone_checksum(clip.params.backbone);

  struct Job {
    std::string name;
    HeadKind head;
    bool control;
  };
  std::vector<Job> jobs;
  for (HeadKind h : dense_heads(cfg)) {
    jobs.push_back({to_string(h), h, false});
    if (needs_control(cfg)) jobs.push_back({control_name(h), h, true});
  }
  parallel_for(cfg.workers, jobs.size(), [&](std::size_t i) {
    const Job& j = jobs[i];
    const TrainHyperparams& hp = j.control ? cfg.control : cfg.dense;
    if (reusable(j.name, hp, clip_sum)) {
      log("reusing " + j.name + " checkpoint");
      return;
    }
    log("training " + j.name);
    const std::string stream = (j.control ? "train-control:" : "train-dense:") + to_string(j.head);
    const DenseModel<float> m =
        derive_dense_model(clip, j.head, ds, hp, derive_seed(cfg.seed, stream), j.control, progress);
    save_checkpoint(checkpoint(paths, j.name), m);
  });
}

AttackSummary cmd_attack(const RunConfig& cfg, const CommandOptions& opt) {
  return cfg.precision == Precision::float32 ? run_attacks<float>(cfg, opt) : run_attacks<double>(cfg, opt);
}

ReportSummary cmd_report(const RunConfig& cfg, const CommandOptions& opt) {
  const Logger log(opt);
  const auto t0 = Clock::now();
  const RunPaths paths{cfg.output_dir};
  const Dataset ds = need_dataset(paths);
  const std::vector<SyntheticSample>& test = ds.test;

  std::vector<SampleOutcome> clean;
  for (const auto& s : test) {
    const fs::path p = paths.attacks() / "clean" / (s.id + ".json");
    if (!fs::exists(p)) throw ConfigError("no clean outcomes in " + paths.attacks().string() + "; run 'attack' first");
    clean.push_back(sample_outcome_from_json(read_json(p)));
  }

  std::vector<AttackRows> rows;
  for (const AttackSpec& spec : cfg.expand_attacks()) {
    AttackRows r{spec, {}};
    const fs::path dir = paths.attacks() / spec.name;
    bool same_spec = false;
    try {
      same_spec = fs::exists(dir / "spec.json") && read_json(dir / "spec.json") == to_json(spec);
    } catch (const std::exception&) {
    }
    if (same_spec)
      for (const auto& s : test) {
        const fs::path p = dir / (s.id + ".json");
        if (!fs::exists(p)) continue;
        try {
          r.records.push_back(attack_record_from_json(read_json(p)));
        } catch (const std::exception& e) {
          log("warning: unreadable record " + p.string() + ": " + e.what());
        }
      }
    rows.push_back(std::move(r));
  }

  MetricReport rep = run_evaluation_suite(config_echo(cfg), cfg.seed, test, clean, rows);
  if (fs::exists(paths.attacks() / "diagnostics.json"))
    rep.diagnostics["gradient_conflict"] = read_json(paths.attacks() / "diagnostics.json").at("gradient_conflict");
  json transfer = json::object();
  const MetricRow* clip_row = rep.find("pgd_clip");
  for (HeadKind h : cfg.attack.heads) {
    const MetricRow* dense_row = rep.find("pgd_dense." + to_string(h));
    auto get = [](const MetricRow* row, auto member) -> json {
      if (!row || !row->complete) return nullptr;
      const std::optional<double>& v = row->asr.*member;
      return v ? json(*v) : json(nullptr);
    };
    const auto dense_member = h == HeadKind::segmentation ? &Metrics::miou : &Metrics::cell_map;
    transfer[to_string(h)] = {{"dense_attack_recall_asr", get(dense_row, &Metrics::recall_at_1)},
                              {"clip_attack_dense_asr", get(clip_row, dense_member)}};
  }
  rep.diagnostics["transfer"] = transfer;
  json training = json::object();
  if (fs::is_directory(paths.models()))
    for (const auto& e : fs::directory_iterator(paths.models()))
      if (e.path().extension() == ".json") training[e.path().stem().string()] = read_json(e.path()).value("metrics", json::object());
  rep.diagnostics["training_metrics"] = training;

  ReportSummary out;
  out.missing = rep.missing;
  write_file_atomic(paths.reports() / "table1.csv", table1_csv(rep, cfg));
  write_file_atomic(paths.reports() / "table2.csv", table2_csv(rep, cfg));
  write_file_atomic(paths.reports() / "table3.csv", table3_csv(rep, cfg));
  write_json(paths.reports() / "report.json", to_json(rep));
  write_triptychs(paths, cfg, test, out);
  for (const auto& m : out.missing) log("warning: attack row " + m + " has missing or failed samples");
  write_run_record(paths, cfg, {{"report", seconds_since(t0)}});
  return out;
}

AttackSummary cmd_all(const RunConfig& cfg, const CommandOptions& opt) {
  const RunPaths paths{cfg.output_dir};
  json timings = json::object();
  auto t = Clock::now();
  cmd_generate(cfg, opt);
  timings["generate"] = seconds_since(t);
  t = Clock::now();
  cmd_train(cfg, opt);
  timings["train"] = seconds_since(t);
  t = Clock::now();
  AttackSummary sum = cmd_attack(cfg, opt);
  timings["attack"] = seconds_since(t);
  t = Clock::now();
  cmd_report(cfg, opt);
  timings["report"] = seconds_since(t);
  double total = 0.0;
  for (const auto& [k, v] : timings.items()) total += v.get<double>();
  timings["total"] = total;
  write_run_record(paths, cfg, timings);
  return sum;
}

}  // namespace mtadv
