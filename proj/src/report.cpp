#include "mtadv/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "mtadv/training.hpp"

namespace mtadv {

using nlohmann::json;

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json iou_json(const IouCounts& c) {
  return {{"intersection", c.intersection}, {"union", c.union_}};
}

IouCounts iou_from(const json& j) {
  IouCounts c;
  const auto inter = j.at("intersection").get<std::vector<long long>>();
  const auto uni = j.at("union").get<std::vector<long long>>();
  if (inter.size() != c.intersection.size() || uni.size() != c.union_.size())
    throw std::invalid_argument("IoU counts have the wrong number of classes");
  std::copy(inter.begin(), inter.end(), c.intersection.begin());
  std::copy(uni.begin(), uni.end(), c.union_.begin());
  return c;
}

json cells_json(const std::vector<CellPrediction>& cells) {
  json out = json::array();
  for (const auto& c : cells) out.push_back(json::array({c.objectness, c.class_id}));
  return out;
}

std::vector<CellPrediction> cells_from(const json& j) {
  std::vector<CellPrediction> out;
  for (const auto& c : j) out.push_back({c.at(0).get<double>(), c.at(1).get<int>()});
  return out;
}

template <typename T>
nn::Mat<double> logits_of(const DenseModel<T>& m, const BasicImage<T>& image) {
  const BasicImage<T>* p = &image;
  return dense_logits(m, std::span<const BasicImage<T>* const>(&p, 1));
}

template <typename T>
IouCounts seg_counts(const DenseModel<T>& m, const SyntheticSample& s, const BasicImage<T>& image) {
  IouCounts c;
  c.add(seg_predictions(logits_of(m, image)), s.seg_mask);
  return c;
}

template <typename T>
std::vector<CellPrediction> det_cells(const DenseModel<T>& m, const BasicImage<T>& image) {
  return cell_predictions(logits_of(m, image));
}

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pct_cell(const std::optional<double>& v) { return v ? fmt("%.2f", 100.0 * *v) : ""; }

std::string asr_cell(const std::optional<double>& v) {
  if (!v) return "";
  const double r = round_decimal(*v, 1);
  return fmt("%.1f", r == 0.0 ? 0.0 : r);
}

std::optional<double> dense_metric(const Metrics& m, HeadKind h, bool control) {
  if (h == HeadKind::segmentation) return control ? m.control_miou : m.miou;
  return control ? m.control_cell_map : m.cell_map;
}

std::string dense_metric_name(HeadKind h) { return h == HeadKind::segmentation ? "miou" : "cell_map"; }

std::string metric_cells(const MetricReport& r, const MetricRow* row, HeadKind h) {
  const bool control = row && row->spec.control_model;
  std::string out = dense_metric_name(h) + "," + pct_cell(dense_metric(r.clean, h, control)) + ",";
  out += (row ? pct_cell(dense_metric(row->adversarial, h, control)) : "") + ",";
  out += pct_cell(r.clean.recall_at_1) + ",";
  out += (row ? pct_cell(row->adversarial.recall_at_1) : "") + ",";
  out += (row ? asr_cell(dense_metric(row->asr, h, control)) : "") + ",";
  out += row ? asr_cell(row->asr.recall_at_1) : "";
  return out;
}

}  // namespace

json to_json(const SampleOutcome& o) {
  json j = {{"id", o.sample_id}, {"retrieval", {{"top1", o.retrieval_top1}, {"hit", o.retrieval_hit}}}};
  if (o.seg) j["segmentation"] = iou_json(*o.seg);
  if (o.cells) j["detection"] = cells_json(*o.cells);
  if (o.control_seg) j["control_segmentation"] = iou_json(*o.control_seg);
  if (o.control_cells) j["control_detection"] = cells_json(*o.control_cells);
  return j;
}

SampleOutcome sample_outcome_from_json(const json& j) {
  SampleOutcome o;
  o.sample_id = j.at("id").get<std::string>();
  o.retrieval_top1 = j.at("retrieval").at("top1").get<int>();
  o.retrieval_hit = j.at("retrieval").at("hit").get<bool>();
  if (j.contains("segmentation")) o.seg = iou_from(j.at("segmentation"));
  if (j.contains("detection")) o.cells = cells_from(j.at("detection"));
  if (j.contains("control_segmentation")) o.control_seg = iou_from(j.at("control_segmentation"));
  if (j.contains("control_detection")) o.control_cells = cells_from(j.at("control_detection"));
  return o;
}

template <typename T>
SampleOutcome evaluate_outcome(const VictimModels<T>& v, const SyntheticSample& sample, const BasicImage<T>& image) {
  SampleOutcome o;
  o.sample_id = sample.id;
  if (v.clip && v.bank) {
    const BasicImage<T>* p = &image;
    o.retrieval_top1 = retrieve_top1(*v.clip, std::span<const BasicImage<T>* const>(&p, 1), *v.bank).front();
    o.retrieval_hit = o.retrieval_top1 >= 0 && o.retrieval_top1 == v.bank->find(sample.caption);
  }
  if (v.segmentation) o.seg = seg_counts(*v.segmentation, sample, image);
  if (v.detection) o.cells = det_cells(*v.detection, image);
  if (v.control_segmentation) o.control_seg = seg_counts(*v.control_segmentation, sample, image);
  if (v.control_detection) o.control_cells = det_cells(*v.control_detection, image);
  return o;
}

Metrics aggregate_metrics(std::span<const SampleOutcome> outcomes, std::span<const SyntheticSample> samples) {
  if (outcomes.size() != samples.size())
    throw std::invalid_argument("aggregate_metrics: outcome and sample counts differ");
  Metrics m;
  if (outcomes.empty()) return m;

  long hits = 0;
  bool all_seg = true, all_det = true, all_cseg = true, all_cdet = true;
  IouCounts seg, cseg;
  std::vector<CellPrediction> det, cdet;
  std::vector<CellLabel> gts;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const SampleOutcome& o = outcomes[i];
    if (o.sample_id != samples[i].id)
      throw std::invalid_argument("aggregate_metrics: outcome " + o.sample_id + " does not match sample " +
                                  samples[i].id);
    hits += o.retrieval_hit ? 1 : 0;
    all_seg = all_seg && o.seg.has_value();
    all_det = all_det && o.cells.has_value();
    all_cseg = all_cseg && o.control_seg.has_value();
    all_cdet = all_cdet && o.control_cells.has_value();
    if (o.seg) seg += *o.seg;
    if (o.control_seg) cseg += *o.control_seg;
    if (o.cells) det.insert(det.end(), o.cells->begin(), o.cells->end());
    if (o.control_cells) cdet.insert(cdet.end(), o.control_cells->begin(), o.control_cells->end());
    gts.insert(gts.end(), samples[i].cell_labels.begin(), samples[i].cell_labels.end());
  }
  m.recall_at_1 = static_cast<double>(hits) / static_cast<double>(outcomes.size());
  if (all_seg) m.miou = seg.miou();
  if (all_det) m.cell_map = cell_map(det, gts);
  if (all_cseg) m.control_miou = cseg.miou();
  if (all_cdet) m.control_cell_map = cell_map(cdet, gts);
  return m;
}

template <typename T>
BudgetAudit audit_result(const AttackResult<T>& r, const BasicImage<T>& clean, double tol) {
  BudgetAudit a;
  a.linf_composed = static_cast<double>(linf_norm(r.delta_composed.delta));
  a.linf_task = static_cast<double>(linf_norm(r.delta_task.delta));
  a.linf_clip = static_cast<double>(linf_norm(r.delta_clip.delta));
  a.feasible = r.adversarial.is_feasible();
  a.reconstructs = r.adversarial.shape() == clean.shape() && r.delta_composed.delta.shape() == clean.shape();
  for (std::size_t i = 0; a.reconstructs && i < clean.size(); ++i)
    a.reconstructs = clean[i] + r.delta_composed.delta[i] == r.adversarial[i];
  a.within_budget = a.linf_task <= r.delta_task.budget + tol && a.linf_clip <= r.delta_clip.budget + tol &&
                    a.linf_composed <= r.delta_task.budget + r.delta_clip.budget + tol;
  return a;
}

json to_json(const BudgetAudit& a) {
  return {{"linf_composed", a.linf_composed}, {"linf_task", a.linf_task},     {"linf_clip", a.linf_clip},
          {"feasible", a.feasible},           {"reconstructs", a.reconstructs}, {"within_budget", a.within_budget}};
}

BudgetAudit budget_audit_from_json(const json& j) {
  BudgetAudit a;
  a.linf_composed = j.at("linf_composed").get<double>();
  a.linf_task = j.at("linf_task").get<double>();
  a.linf_clip = j.at("linf_clip").get<double>();
  a.feasible = j.at("feasible").get<bool>();
  a.reconstructs = j.at("reconstructs").get<bool>();
  a.within_budget = j.at("within_budget").get<bool>();
  return a;
}

json to_json(const AttackRecord& r) {
  if (r.error) return {{"id", r.sample_id}, {"error", *r.error}};
  json stages = json::array();
  for (const auto& s : r.stages) stages.push_back({{"objective", s.objective}, {"eps", s.eps}, {"loss", s.loss}});
  json cos = json::array();
  for (const auto& c : r.cosines) cos.push_back(opt_json(c));
  return {{"id", r.sample_id}, {"partial", r.partial}, {"audit", to_json(r.audit)}, {"stages", stages},
          {"cosines", cos},    {"warnings", r.warnings}, {"outcome", to_json(r.outcome)}};
}

AttackRecord attack_record_from_json(const json& j) {
  AttackRecord r;
  r.sample_id = j.at("id").get<std::string>();
  if (j.contains("error")) {
    r.error = j.at("error").get<std::string>();
    return r;
  }
  r.partial = j.at("partial").get<bool>();
  r.audit = budget_audit_from_json(j.at("audit"));
  for (const auto& s : j.at("stages"))
    r.stages.push_back({s.at("objective").get<std::string>(), s.at("eps").get<double>(),
                        s.at("loss").get<std::vector<double>>()});
  for (const auto& c : j.at("cosines")) r.cosines.push_back(c.is_null() ? std::nullopt : std::optional<double>(c));
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.outcome = sample_outcome_from_json(j.at("outcome"));
  return r;
}

Metrics asr_of(const Metrics& clean, const Metrics& adv) {
  auto one = [](const std::optional<double>& b, const std::optional<double>& a) -> std::optional<double> {
    if (!b || !a || !(*b > 0.0)) return std::nullopt;
    return asr(*b, *a);
  };
  return {one(clean.recall_at_1, adv.recall_at_1), one(clean.cell_map, adv.cell_map), one(clean.miou, adv.miou),
          one(clean.control_cell_map, adv.control_cell_map), one(clean.control_miou, adv.control_miou)};
}

const MetricRow* MetricReport::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.spec.name == name) return &r;
  return nullptr;
}

MetricReport run_evaluation_suite(const json& config_echo, std::uint64_t seed, std::span<const SyntheticSample> samples,
                                  std::span<const SampleOutcome> clean, std::span<const AttackRows> attacks) {
  MetricReport rep;
  rep.config = config_echo;
  rep.seed = seed;
  rep.samples = static_cast<int>(samples.size());
  rep.clean = aggregate_metrics(clean, samples);

  int violations = 0;
  double max_linf = 0.0;
  for (const AttackRows& a : attacks) {
    MetricRow row;
    row.spec = a.spec;
    std::map<std::string, const AttackRecord*> by_id;
    for (const auto& r : a.records) by_id[r.sample_id] = &r;

    std::vector<SampleOutcome> outcomes;
    std::vector<int> ascents, stage_counts;
    int kl_stages = 0, kl_monotone = 0, warnings = 0, row_violations = 0;
    std::vector<double> cosines;
    double linf_c = 0.0, linf_t = 0.0, linf_k = 0.0;
    for (const auto& s : samples) {
      const auto it = by_id.find(s.id);
      if (it == by_id.end()) continue;
      const AttackRecord& r = *it->second;
      if (r.error) {
        ++row.failed;
        continue;
      }
      ++row.samples;
      row.partial += r.partial ? 1 : 0;
      warnings += static_cast<int>(r.warnings.size());
      outcomes.push_back(r.outcome);
      for (std::size_t k = 0; k < r.stages.size(); ++k) {
        const StageTrace& st = r.stages[k];
        if (ascents.size() <= k) ascents.resize(k + 1, 0), stage_counts.resize(k + 1, 0);
        if (st.eps <= 0.0 || st.loss.empty()) continue;
        ++stage_counts[k];
        ascents[k] += st.loss.back() > st.loss.front() ? 1 : 0;
        if (st.objective == "kl") {
          ++kl_stages;
          kl_monotone += std::is_sorted(st.loss.begin(), st.loss.end()) ? 1 : 0;
        }
      }
      for (const auto& c : r.cosines)
        if (c) cosines.push_back(*c);
      linf_c = std::max(linf_c, r.audit.linf_composed);
      linf_t = std::max(linf_t, r.audit.linf_task);
      linf_k = std::max(linf_k, r.audit.linf_clip);
      if (!r.audit.feasible || !r.audit.reconstructs || !r.audit.within_budget) ++row_violations;
    }
    row.complete = row.samples == rep.samples && row.failed == 0;
    if (row.complete) {
      row.adversarial = aggregate_metrics(outcomes, samples);
      row.asr = asr_of(rep.clean, row.adversarial);
    } else {
      rep.missing.push_back(a.spec.name);
    }

    json ascent = json::array();
    for (std::size_t k = 0; k < ascents.size(); ++k)
      ascent.push_back(stage_counts[k] ? json(static_cast<double>(ascents[k]) / stage_counts[k]) : json(nullptr));
    row.diagnostics = {
        {"stage_ascent_rate", ascent},
        {"kl_monotone_rate", kl_stages ? json(static_cast<double>(kl_monotone) / kl_stages) : json(nullptr)},
        {"cosine_median", opt_json(median(cosines))},
        {"warnings", warnings},
        {"budget",
         {{"max_linf_composed", linf_c},
          {"max_linf_task", linf_t},
          {"max_linf_clip", linf_k},
          {"violations", row_violations}}},
    };
    violations += row_violations;
    max_linf = std::max(max_linf, linf_c);
    rep.rows.push_back(std::move(row));
  }
  rep.diagnostics["budget"] = {{"violations", violations}, {"max_linf_composed", max_linf}};
  return rep;
}

json to_json(const Metrics& m) {
  json j = {{"recall_at_1", opt_json(m.recall_at_1)}, {"cell_map", opt_json(m.cell_map)}, {"miou", opt_json(m.miou)}};
  if (m.control_cell_map) j["control_cell_map"] = *m.control_cell_map;
  if (m.control_miou) j["control_miou"] = *m.control_miou;
  return j;
}

json to_json(const MetricReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"attack", to_json(row.spec)},
                    {"complete", row.complete},
                    {"samples", row.samples},
                    {"partial", row.partial},
                    {"failed", row.failed},
                    {"adversarial", to_json(row.adversarial)},
                    {"asr", to_json(row.asr)},
                    {"diagnostics", row.diagnostics}});
  return {{"format", "mtadvclip-report/1"},
          {"seed", r.seed},
          {"samples", r.samples},
          {"config", r.config},
          {"clean", to_json(r.clean)},
          {"rows", rows},
          {"missing", r.missing},
          {"diagnostics", r.diagnostics}};
}

std::string table1_csv(const MetricReport& r, const RunConfig& cfg) {
  const AttackPlan& p = cfg.attack;
  std::ostringstream out;
  out << kTable1Header << "\n";
  for (HeadKind h : p.heads) {
    const std::string ht = to_string(h);
    std::vector<std::pair<std::string, std::string>> rows = {
        {"PGD (CLIP)", "pgd_clip"},
        {"PGD (dense)", "pgd_dense." + ht},
        {"Joint optimization", "joint." + ht},
        {"MT-AdvCLIP", staged_attack_name(Strategy::mt_advclip, h, split_budget(p.eps_total, p.lambda))},
    };
    if (p.compute_matched) {
      rows.push_back({"PGD (CLIP) 2x iterations", "pgd_clip.20it"});
      rows.push_back({"PGD (dense) 2x iterations", "pgd_dense." + ht + ".20it"});
      rows.push_back({"Joint optimization 2x iterations", "joint." + ht + ".20it"});
    }
    if (p.control) rows.push_back({"PGD (dense) random-backbone control", "pgd_control." + ht});
    for (const auto& [method, name] : rows) {
      const MetricRow* row = r.find(name);
      out << ht << "," << method << "," << name << "," << metric_cells(r, row && row->complete ? row : nullptr, h)
          << "\n";
    }
  }
  return out.str();
}

std::string table2_csv(const MetricReport& r, const RunConfig& cfg) {
  const AttackPlan& p = cfg.attack;
  std::ostringstream out;
  out << kTable2Header << "\n";
  for (HeadKind h : p.heads) {
    const std::string ht = to_string(h);
    auto line = [&](const std::string& order, const std::string& name, const std::string& et,
                    const std::string& ec) {
      const MetricRow* row = r.find(name);
      out << ht << "," << order << "," << name << "," << et << "," << ec << ","
          << metric_cells(r, row && row->complete ? row : nullptr, h) << "\n";
    };
    if (p.orders.empty()) continue;
    line("joint", "joint." + ht, format_eps(p.eps_total), "");
    for (const auto& [task, clip] : p.orders) {
      const BudgetSplit b = BudgetSplit::from_parts(task, clip);
      line("task_then_clip", staged_attack_name(Strategy::mt_advclip, h, b), format_eps(task), format_eps(clip));
      line("clip_then_task", staged_attack_name(Strategy::order_reversed, h, b), format_eps(task),
           format_eps(clip));
    }
  }
  return out.str();
}

std::string table3_csv(const MetricReport& r, const RunConfig& cfg) {
  const AttackPlan& p = cfg.attack;
  std::ostringstream out;
  out << kTable3Header << "\n";
  for (HeadKind h : p.heads) {
    const std::string ht = to_string(h);
    for (const auto& [total, lambda] : p.sweep) {
      const BudgetSplit b = split_budget(total, lambda);
      const std::string name = staged_attack_name(Strategy::mt_advclip, h, b);
      const MetricRow* row = r.find(name);
      out << ht << "," << format_eps(total) << "," << fmt("%g", lambda) << "," << format_eps(b.eps_task) << ","
          << format_eps(b.eps_clip) << "," << name << "," << metric_cells(r, row && row->complete ? row : nullptr, h)
          << "\n";
    }
  }
  return out.str();
}

template SampleOutcome evaluate_outcome<float>(const VictimModels<float>&, const SyntheticSample&,
                                               const BasicImage<float>&);
template SampleOutcome evaluate_outcome<double>(const VictimModels<double>&, const SyntheticSample&,
                                                const BasicImage<double>&);
template BudgetAudit audit_result<float>(const AttackResult<float>&, const BasicImage<float>&, double);
template BudgetAudit audit_result<double>(const AttackResult<double>&, const BasicImage<double>&, double);

}  // namespace mtadv
