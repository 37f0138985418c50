#include "mtadv/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtadv {

using nn::Mat;

template <typename T>
int TextBank<T>::find(const std::string& caption) const {
  const auto it = std::find(captions.begin(), captions.end(), caption);
  return it == captions.end() ? -1 : static_cast<int>(it - captions.begin());
}

template <typename T>
TextBank<T> build_text_bank(const ClipModel<T>& model, std::vector<std::string> captions) {
  if (captions.empty()) throw std::invalid_argument("text bank must not be empty");
  std::vector<std::vector<int>> ids;
  ids.reserve(captions.size());
  for (const auto& c : captions) ids.push_back(encode_caption(c));
  TextBank<T> bank{std::move(captions), model.embed_texts(ids)};
  for (Eigen::Index r = 0; r < bank.embeddings.rows(); ++r)
    if (std::abs(static_cast<double>(bank.embeddings.row(r).norm()) - 1.0) > 1e-5)
      throw std::logic_error("text embedding is not unit norm");
  return bank;
}

std::vector<std::string> unique_captions(std::span<const SyntheticSample> samples) {
  std::vector<std::string> out;
  for (const auto& s : samples)
    if (std::find(out.begin(), out.end(), s.caption) == out.end()) out.push_back(s.caption);
  return out;
}

PredictionDistribution softmax_distribution(std::span<const double> sims, double temperature) {
  if (sims.empty()) throw std::invalid_argument("distribution over an empty text bank");
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  const double mx = *std::max_element(sims.begin(), sims.end());
  PredictionDistribution d;
  d.probs.resize(sims.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) z += d.probs[i] = std::exp((sims[i] - mx) / temperature);
  const double norm = 1.0 + kSmoothing * static_cast<double>(sims.size());
  for (auto& p : d.probs) p = (p / z + kSmoothing) / norm;
  return d;
}

namespace {

template <typename T>
std::vector<double> similarities(const Mat<T>& emb_row, const TextBank<T>& bank) {
  const Mat<T> s = emb_row * bank.embeddings.transpose();
  std::vector<double> out(static_cast<std::size_t>(s.cols()));
  for (Eigen::Index i = 0; i < s.cols(); ++i) out[i] = static_cast<double>(s(0, i));
  return out;
}

}  // namespace

template <typename T>
PredictionDistribution clip_distribution(const ClipModel<T>& model, const BasicImage<T>& image,
                                         const TextBank<T>& bank, double temperature) {
  if (bank.size() == 0) throw std::invalid_argument("clip_distribution: empty text bank");
  const BasicImage<T>* batch[] = {&image};
  const Mat<T> emb = model.embed_images(pack_images<T, T>(batch), nullptr);
  const auto sims = similarities(emb, bank);
  return softmax_distribution(sims, temperature);
}

double kl_divergence(const PredictionDistribution& p, const PredictionDistribution& q) {
  if (p.size() != q.size())
    throw std::invalid_argument("kl_divergence: length mismatch " + std::to_string(p.size()) +
                                " vs " + std::to_string(q.size()));
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.probs[i] > 0.0) kl += p.probs[i] * std::log(p.probs[i] / q.probs[i]);
  return std::max(kl, 0.0);
}

TaskTarget task_target(const SyntheticSample& sample, HeadKind kind) {
  TaskTarget t{kind, {}};
  if (kind == HeadKind::segmentation) {
    t.labels = sample.seg_mask;
  } else if (kind == HeadKind::detection) {
    for (const auto& c : sample.cell_labels) t.labels.push_back(c.objectness ? c.class_id : 0);
  } else {
    throw std::invalid_argument("task_target: no dense target for a retrieval head");
  }
  return t;
}

template <typename T>
LossGrad<T> task_objective(const DenseModel<T>& model, const BasicImage<T>& image,
                           const TaskTarget& target, bool need_grad) {
  if (target.kind != model.kind())
    throw std::invalid_argument("task_objective: " + to_string(target.kind) + " target for a " +
                                to_string(model.kind()) + " model");
  const BasicImage<T>* batch[] = {&image};
  const nn::Act<T> x = pack_images<T, T>(batch);
  typename DenseModel<T>::Cache cache;
  const Mat<T> logits = model.logits(x, &cache);
  if (static_cast<std::size_t>(logits.rows()) != target.labels.size())
    throw std::invalid_argument("task_objective: target has " + std::to_string(target.labels.size()) +
                                " positions, model produces " + std::to_string(logits.rows()));
  LossGrad<T> out;
  if (!need_grad) {
    out.loss = cross_entropy<T>(logits, target.labels, nullptr);
    return out;
  }
  Mat<T> d_logits;
  out.loss = cross_entropy<T>(logits, target.labels, &d_logits);
  const Mat<T> d_norm = model.logits_backward(cache, d_logits, nullptr, true);
  out.grad = std::move(unpack_input_grad<T>(d_norm, 1, image.height(), image.width()).front());
  return out;
}

template <typename T>
ClipKlObjective<T>::ClipKlObjective(const ClipModel<T>& model, const TextBank<T>& bank,
                                    const BasicImage<T>& x_clean, double temperature)
    : model_(&model), bank_(&bank), temperature_(temperature),
      p_(clip_distribution(model, x_clean, bank, temperature)) {}

template <typename T>
LossGrad<T> ClipKlObjective<T>::operator()(const BasicImage<T>& x, bool need_grad) const {
  const BasicImage<T>* batch[] = {&x};
  typename ClipModel<T>::ImageCache cache;
  const Mat<T> emb = model_->embed_images(pack_images<T, T>(batch), &cache);
  const auto sims = similarities(emb, *bank_);
  const std::size_t n = sims.size();

  // Unsmoothed softmax q, then smoothed q'.
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> q(n);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += q[i] = std::exp((sims[i] - mx) / temperature_);
  for (auto& v : q) v /= z;
  const double norm = 1.0 + kSmoothing * static_cast<double>(n);

  LossGrad<T> out;
  std::vector<double> g(n);  // dKL/dq
  for (std::size_t i = 0; i < n; ++i) {
    const double qs = (q[i] + kSmoothing) / norm;
    const double p = p_.probs[i];
    const double ratio = p / qs;
    out.loss += p * std::log(ratio);
    g[i] = -ratio / norm;
  }
  if (!need_grad) return out;

  Mat<T> d_sims(1, static_cast<Eigen::Index>(n));
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += q[i] * (g[j] - g[i]);
    d_sims(0, j) = static_cast<T>(q[j] * acc / temperature_);
  }
  const Mat<T> d_emb = d_sims * bank_->embeddings;
  const Mat<T> d_norm = model_->embed_images_backward(cache, d_emb, nullptr, true);
  out.grad = std::move(unpack_input_grad<T>(d_norm, 1, x.height(), x.width()).front());
  return out;
}

template <typename T>
std::optional<double> gradient_cosine(const BasicImage<T>& a, const BasicImage<T>& b) {
  require_same_shape(a, b, "gradient_cosine");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

template <typename T>
JointEval<T> joint_objective(const DenseModel<T>& task_model, const ClipKlObjective<T>& kl,
                             const BasicImage<T>& image, const TaskTarget& target, double weight,
                             bool need_grad) {
  if (!(weight >= 0.0)) throw std::invalid_argument("joint_objective: weight must be >= 0");
  JointEval<T> out;
  out.task = task_objective(task_model, image, target, need_grad);
  if (weight == 0.0) {
    out.total = out.task;
    return out;
  }
  out.kl = kl(image, need_grad);
  out.total.loss = out.task.loss + weight * out.kl.loss;
  if (need_grad) {
    out.total.grad = out.task.grad;
    const T w = static_cast<T>(weight);
    for (std::size_t i = 0; i < out.total.grad.size(); ++i) out.total.grad[i] += w * out.kl.grad[i];
    out.cosine = gradient_cosine(out.task.grad, out.kl.grad);
  }
  return out;
}

template <typename T>
ConflictReport gradient_conflict_report(const DenseModel<T>& task_model, const ClipModel<T>& clip_model,
                                        std::span<const SyntheticSample> samples,
                                        const TextBank<T>& bank, double temperature,
                                        double probe_radius, std::uint64_t seed) {
  ConflictReport report;
  std::vector<double> values;
  for (const auto& s : samples) {
    const BasicImage<T> x = s.image.template cast<T>();
    ClipKlObjective<T> kl(clip_model, bank, x, temperature);
    Rng rng(derive_seed(seed, "conflict:" + s.id));
    BasicImage<T> probe = x;
    for (auto& v : probe)
      v = std::clamp(v + static_cast<T>(rng.uniform(-probe_radius, probe_radius)), T(0), T(1));
    const auto task = task_objective(task_model, probe, task_target(s, task_model.kind()));
    const auto klg = kl(probe, true);
    ConflictEntry e{s.id, gradient_cosine(task.grad, klg.grad)};
    if (e.cosine) values.push_back(*e.cosine);
    report.entries.push_back(std::move(e));
  }
  if (!values.empty()) {
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size();
    report.median = m % 2 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
    double sum = 0.0;
    for (double v : values) sum += v;
    report.mean = sum / static_cast<double>(m);
  }
  return report;
}

#define MTADV_INSTANTIATE(T)                                                                        \
  template struct TextBank<T>;                                                                      \
  template TextBank<T> build_text_bank<T>(const ClipModel<T>&, std::vector<std::string>);           \
  template PredictionDistribution clip_distribution<T>(const ClipModel<T>&, const BasicImage<T>&,   \
                                                       const TextBank<T>&, double);                 \
  template LossGrad<T> task_objective<T>(const DenseModel<T>&, const BasicImage<T>&,                \
                                         const TaskTarget&, bool);                                  \
  template class ClipKlObjective<T>;                                                                \
  template std::optional<double> gradient_cosine<T>(const BasicImage<T>&, const BasicImage<T>&);    \
  template JointEval<T> joint_objective<T>(const DenseModel<T>&, const ClipKlObjective<T>&,         \
                                           const BasicImage<T>&, const TaskTarget&, double, bool);  \
  template ConflictReport gradient_conflict_report<T>(const DenseModel<T>&, const ClipModel<T>&,    \
                                                      std::span<const SyntheticSample>,             \
                                                      const TextBank<T>&, double, double,           \
                                                      std::uint64_t);

MTADV_INSTANTIATE(float)
MTADV_INSTANTIATE(double)

}  // namespace mtadv
