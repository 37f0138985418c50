#include "mtadv/config.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "mtadv/errors.hpp"
#include "mtadv/io.hpp"
#include "mtadv/json_util.hpp"

namespace mtadv {

std::string to_string(Precision p) { return p == Precision::float32 ? "float32" : "float64"; }

std::string format_eps(double eps) {
  const double levels = eps * 255.0;
  char buf[64];
  if (std::abs(levels - std::round(levels)) < 1e-9) {
    std::snprintf(buf, sizeof buf, "%.0f/255", std::round(levels));
  } else {
    std::snprintf(buf, sizeof buf, "%g", eps);
  }
  return buf;
}

namespace {

std::string levels_token(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::round(eps * 255.0 * 1e6) / 1e6);
  return buf;
}

std::string head_token(HeadKind h) { return to_string(h); }

}  // namespace

std::string staged_attack_name(Strategy st, HeadKind head, const BudgetSplit& b) {
  const std::string prefix = st == Strategy::order_reversed ? "reversed." : "mt_advclip.";
  return prefix + head_token(head) + "." + levels_token(b.eps_task) + "-" + levels_token(b.eps_clip);
}

DatasetSpec RunConfig::resolved_dataset() const {
  DatasetSpec d = dataset;
  if (!dataset_seed_explicit) d.seed = derive_seed(seed, "dataset");
  return d;
}

std::vector<AttackSpec> RunConfig::expand_attacks() const {
  const AttackPlan& p = attack;
  std::vector<AttackSpec> out;
  std::set<std::string> names;

  auto add = [&](AttackSpec s) {
    if (!names.insert(s.name).second) return;
    s.stage1.seed = derive_seed(seed, "attack:" + s.name + ":stage1");
    s.stage2.seed = derive_seed(seed, "attack:" + s.name + ":stage2");
    out.push_back(std::move(s));
  };
  auto base = [&](const std::string& name, Strategy st, HeadKind head, int iters) {
    AttackSpec s;
    s.name = name;
    s.strategy = st;
    s.head = head;
    s.stage1.alpha = s.stage2.alpha = p.alpha;
    s.stage1.iterations = iters;
    s.stage2.iterations = p.iterations;
    s.joint_weight = p.joint_weight;
    return s;
  };
  auto single = [&](const std::string& name, AttackTarget target, HeadKind head, int iters) {
    AttackSpec s = base(name, Strategy::single_task, head, iters);
    s.target = target;
    s.budget = BudgetSplit::from_parts(p.eps_total, 0.0);
    if (target == AttackTarget::clip) s.stage1.init_mode = InitMode::random_uniform;
    return s;
  };
  auto joint = [&](const std::string& name, HeadKind head, int iters) {
    AttackSpec s = base(name, Strategy::joint, head, iters);
    s.budget = BudgetSplit::from_parts(p.eps_total, 0.0);
    return s;
  };
  auto staged = [&](Strategy st, HeadKind head, const BudgetSplit& b) {
    AttackSpec s = base(staged_attack_name(st, head, b), st, head, p.iterations);
    s.budget = b;
    if (st == Strategy::order_reversed) s.stage1.init_mode = InitMode::random_uniform;
    return s;
  };

  if (p.sweep.empty() && p.orders.empty() && p.extra.empty()) return out;

  const HeadKind first = p.heads.empty() ? HeadKind::detection : p.heads.front();
  add(single("pgd_clip", AttackTarget::clip, first, p.iterations));
  if (p.compute_matched) add(single("pgd_clip.20it", AttackTarget::clip, first, 2 * p.iterations));
  for (HeadKind h : p.heads) {
    const std::string ht = head_token(h);
    add(single("pgd_dense." + ht, AttackTarget::dense, h, p.iterations));
    add(joint("joint." + ht, h, p.iterations));
    add(staged(Strategy::mt_advclip, h, split_budget(p.eps_total, p.lambda)));
    if (p.compute_matched) {
      add(single("pgd_dense." + ht + ".20it", AttackTarget::dense, h, 2 * p.iterations));
      add(joint("joint." + ht + ".20it", h, 2 * p.iterations));
    }
    if (p.control) {
      AttackSpec s = single("pgd_control." + ht, AttackTarget::dense, h, p.iterations);
      s.control_model = true;
      add(std::move(s));
    }
    for (const auto& [total, lambda] : p.sweep) add(staged(Strategy::mt_advclip, h, split_budget(total, lambda)));
    for (const auto& [task, clip] : p.orders) {
      const BudgetSplit b = BudgetSplit::from_parts(task, clip);
      add(staged(Strategy::mt_advclip, h, b));
      add(staged(Strategy::order_reversed, h, b));
    }
  }
  for (const AttackSpec& s : p.extra) {
    if (names.count(s.name)) throw ConfigError("attack.extra: duplicate attack name '" + s.name + "'");
    names.insert(s.name);
    out.push_back(s);
  }
  return out;
}

RunConfig default_run_config() {
  RunConfig c;
  c.clip.epochs = 40;
  c.clip.learning_rate = 3e-3;
  c.clip.noise_augment = 20.0 / 255.0;
  c.clip.gate = 0.70;
  c.dense.epochs = 25;
  c.dense.learning_rate = 1e-2;
  c.dense.gate = 0.60;
  c.control = c.dense;
  c.control.gate = 0.0;
  const double e = 1.0 / 255.0;
  c.attack.sweep = {{4 * e, 1.0}, {6 * e, 0.5}, {6 * e, 2.0}, {8 * e, 1.0 / 3.0}, {8 * e, 1.0}, {8 * e, 3.0}};
  c.attack.orders = {{6 * e, 2 * e}, {2 * e, 6 * e}};
  return c;
}

namespace {

nlohmann::json pairs_to_json(const std::vector<std::pair<double, double>>& v, const char* a, const char* b) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [x, y] : v) out.push_back({{a, x}, {b, y}});
  return out;
}

std::vector<std::pair<double, double>> pairs_from_json(const nlohmann::json& j, const std::string& where,
                                                       const char* a, const char* b) {
  if (!j.is_array()) throw ConfigError(where + ": expected a list");
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    JsonReader r(j[i], w);
    const auto* x = r.child(a);
    const auto* y = r.child(b);
    r.finish();
    if (!x || !y) throw ConfigError(w + ": needs both '" + a + "' and '" + b + "'");
    out.emplace_back(parse_real(*x, w + "." + a), parse_real(*y, w + "." + b));
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json heads = nlohmann::json::array();
  for (HeadKind h : c.attack.heads) heads.push_back(to_string(h));
  nlohmann::json extra = nlohmann::json::array();
  for (const auto& s : c.attack.extra) extra.push_back(to_json(s));
  nlohmann::json dataset = to_json(c.dataset);
  if (!c.dataset_seed_explicit) dataset.erase("seed");
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir.generic_string()},
      {"precision", to_string(c.precision)},
      {"workers", c.workers},
      {"dataset", dataset},
      {"training", {{"clip", to_json(c.clip)}, {"dense", to_json(c.dense)}, {"control", to_json(c.control)}}},
      {"attack",
       {{"heads", heads},
        {"eps_total", c.attack.eps_total},
        {"lambda", c.attack.lambda},
        {"alpha", c.attack.alpha},
        {"iterations", c.attack.iterations},
        {"joint_weight", c.attack.joint_weight},
        {"sweep", pairs_to_json(c.attack.sweep, "eps_total", "lambda")},
        {"orders", pairs_to_json(c.attack.orders, "eps_task", "eps_clip")},
        {"compute_matched", c.attack.compute_matched},
        {"control", c.attack.control},
        {"extra", extra}}},
      {"evaluation", {{"triptychs", c.evaluation.triptychs}, {"conflict_probe", c.evaluation.conflict_probe}}},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c = default_run_config();
  JsonReader r(j, "config");
  r.get("seed", c.seed);
  std::string out = c.output_dir.generic_string(), precision = to_string(c.precision);
  r.get("output_dir", out);
  r.get("precision", precision);
  r.get("workers", c.workers);
  c.output_dir = out;
  if (precision == "float32") c.precision = Precision::float32;
  else if (precision == "float64") c.precision = Precision::float64;
  else throw ConfigError("config.precision: expected 'float32' or 'float64'");
  if (c.workers < 1) throw ConfigError("config.workers: must be >= 1");

  if (const auto* d = r.child("dataset")) {
    c.dataset = dataset_spec_from_json(*d, c.dataset);
    c.dataset_seed_explicit = d->contains("seed");
  }
  try {
    c.dataset.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  if (const auto* t = r.child("training")) {
    JsonReader tr(*t, "config.training");
    if (const auto* v = tr.child("clip")) c.clip = train_hyperparams_from_json(*v, "config.training.clip", c.clip);
    if (const auto* v = tr.child("dense")) c.dense = train_hyperparams_from_json(*v, "config.training.dense", c.dense);
    if (const auto* v = tr.child("control"))
      c.control = train_hyperparams_from_json(*v, "config.training.control", c.control);
    tr.finish();
  }

  if (const auto* a = r.child("attack")) {
    const std::string where = "config.attack";
    JsonReader ar(*a, where);
    if (const auto* h = ar.child("heads")) {
      if (!h->is_array()) throw ConfigError(where + ".heads: expected a list");
      c.attack.heads.clear();
      for (const auto& v : *h) {
        HeadKind k;
        try {
          k = head_kind_from_string(v.get<std::string>());
        } catch (const std::exception& e) {
          throw ConfigError(where + ".heads: " + e.what());
        }
        if (k == HeadKind::clip_retrieval) throw ConfigError(where + ".heads: only dense heads can be attacked");
        c.attack.heads.push_back(k);
      }
    }
    ar.get("eps_total", c.attack.eps_total);
    ar.get("lambda", c.attack.lambda);
    ar.get("alpha", c.attack.alpha);
    ar.get("iterations", c.attack.iterations);
    ar.get("joint_weight", c.attack.joint_weight);
    if (const auto* v = ar.child("sweep")) c.attack.sweep = pairs_from_json(*v, where + ".sweep", "eps_total", "lambda");
    if (const auto* v = ar.child("orders"))
      c.attack.orders = pairs_from_json(*v, where + ".orders", "eps_task", "eps_clip");
    ar.get("compute_matched", c.attack.compute_matched);
    ar.get("control", c.attack.control);
    if (const auto* v = ar.child("extra")) {
      if (!v->is_array()) throw ConfigError(where + ".extra: expected a list");
      c.attack.extra.clear();
      for (std::size_t i = 0; i < v->size(); ++i)
        c.attack.extra.push_back(attack_spec_from_json((*v)[i], where + ".extra[" + std::to_string(i) + "]"));
    }
    ar.finish();
    if (!(c.attack.eps_total >= 0.0)) throw ConfigError(where + ".eps_total: must be non-negative");
    if (!(c.attack.lambda > 0.0)) throw ConfigError(where + ".lambda: must be positive");
    if (!(c.attack.alpha > 0.0)) throw ConfigError(where + ".alpha: must be positive");
    if (c.attack.iterations < 1) throw ConfigError(where + ".iterations: must be >= 1");
    if (!(c.attack.joint_weight >= 0.0)) throw ConfigError(where + ".joint_weight: must be >= 0");
    for (const auto& [total, lambda] : c.attack.sweep)
      if (!(total >= 0.0) || !(lambda > 0.0))
        throw ConfigError(where + ".sweep: eps_total must be >= 0 and lambda > 0");
    for (const auto& [task, clip] : c.attack.orders)
      if (!(task >= 0.0) || !(clip >= 0.0)) throw ConfigError(where + ".orders: budgets must be >= 0");
  }

  if (const auto* e = r.child("evaluation")) {
    JsonReader er(*e, "config.evaluation");
    er.get("triptychs", c.evaluation.triptychs);
    er.get("conflict_probe", c.evaluation.conflict_probe);
    er.finish();
    if (c.evaluation.triptychs < 0) throw ConfigError("config.evaluation.triptychs: must be >= 0");
    if (!(c.evaluation.conflict_probe > 0.0))
      throw ConfigError("config.evaluation.conflict_probe: must be positive");
  }
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.what());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mtadv
