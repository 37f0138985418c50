#include "mtadv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mtadv {

std::vector<int> top1_from_similarity(const nn::Mat<double>& sim) {
  std::vector<int> out(static_cast<std::size_t>(sim.rows()));
  for (Eigen::Index r = 0; r < sim.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < sim.cols(); ++c)
      if (sim(r, c) > sim(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double recall_at_1(const nn::Mat<double>& sim, std::span<const int> correct) {
  if (static_cast<std::size_t>(sim.rows()) != correct.size())
    throw std::invalid_argument("recall_at_1: one correct caption index per image required");
  if (sim.rows() == 0) throw std::invalid_argument("recall_at_1: no images");
  for (int c : correct)
    if (c < 0 || c >= sim.cols()) throw std::invalid_argument("recall_at_1: correct index outside the bank");
  const auto top = top1_from_similarity(sim);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < top.size(); ++i) hits += top[i] == correct[i];
  return static_cast<double>(hits) / static_cast<double>(top.size());
}

template <typename T>
std::vector<int> retrieve_top1(const ClipModel<T>& model, std::span<const BasicImage<T>* const> images,
                               const TextBank<T>& bank) {
  const nn::Mat<T> emb = model.embed_images(pack_images<T, T>(images), nullptr);
  const nn::Mat<double> sim = (emb * bank.embeddings.transpose()).template cast<double>();
  return top1_from_similarity(sim);
}

template <typename T>
double recall_at_1(const ClipModel<T>& model, std::span<const BasicImage<T>* const> images,
                   const TextBank<T>& bank, std::span<const int> correct) {
  if (images.size() != correct.size())
    throw std::invalid_argument("recall_at_1: images and correct indices differ in length");
  const nn::Mat<T> emb = model.embed_images(pack_images<T, T>(images), nullptr);
  return recall_at_1((emb * bank.embeddings.transpose()).template cast<double>(), correct);
}

void IouCounts::add(std::span<const int> pred, std::span<const int> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("miou: mask shape mismatch");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= kNumClasses || g < 0 || g >= kNumClasses)
      throw std::invalid_argument("miou: class id out of range");
    if (p == g) {
      ++intersection[p];
      ++union_[p];
    } else {
      ++union_[p];
      ++union_[g];
    }
  }
}

IouCounts& IouCounts::operator+=(const IouCounts& o) {
  for (int c = 0; c < kNumClasses; ++c) {
    intersection[c] += o.intersection[c];
    union_[c] += o.union_[c];
  }
  return *this;
}

double IouCounts::miou() const {
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (union_[c] == 0) continue;
    sum += static_cast<double>(intersection[c]) / static_cast<double>(union_[c]);
    ++n;
  }
  return n ? sum / n : 0.0;
}

double miou(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  if (pred.size() != gt.size()) throw std::invalid_argument("miou: mask shape mismatch");
  if (pred.empty()) throw std::invalid_argument("miou: empty masks");
  std::vector<long long> inter(num_classes, 0), uni(num_classes, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || p >= num_classes || g < 0 || g >= num_classes)
      throw std::invalid_argument("miou: class id out of range");
    ++uni[p];
    if (p == g) ++inter[p];
    else ++uni[g];
  }
  double sum = 0.0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (uni[c] == 0) continue;
    sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++n;
  }
  return sum / n;
}

double cell_map(std::span<const CellPrediction> preds, std::span<const CellLabel> gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("cell_map: grid size mismatch");
  double sum = 0.0;
  int classes = 0;
  for (int c = 1; c <= kNumForeground; ++c) {
    std::size_t num_gt = 0;
    for (const auto& g : gts) num_gt += g.objectness && g.class_id == c;
    if (num_gt == 0) continue;
    ++classes;

    std::vector<std::size_t> det;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i].class_id == c && preds[i].objectness > 0.0) det.push_back(i);
    std::stable_sort(det.begin(), det.end(), [&](std::size_t a, std::size_t b) {
      return preds[a].objectness > preds[b].objectness;
    });

    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t k = 0; k < det.size(); ++k) {
      const auto& g = gts[det[k]];
      tp += g.objectness && g.class_id == c;
      precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    }
    // All-points interpolation: precision envelope, summed over recall steps.
    for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
      ap += (recall[k] - prev_recall) * precision[k];
      prev_recall = recall[k];
    }
    sum += ap;
  }
  return classes ? sum / classes : 0.0;
}

std::vector<CellPrediction> cell_predictions(const nn::Mat<double>& logits) {
  const nn::Mat<double> logp = nn::log_softmax_rows(logits);
  std::vector<CellPrediction> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 1;
    for (Eigen::Index c = 2; c < logits.cols(); ++c)
      if (logp(r, c) > logp(r, best)) best = c;
    out[r] = CellPrediction{-std::expm1(logp(r, 0)), static_cast<int>(best)};
  }
  return out;
}

std::vector<int> seg_predictions(const nn::Mat<double>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(r, c) > logits(r, best)) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

double asr(double acc_before, double acc_after) {
  if (!(acc_before > 0.0)) throw UndefinedAsr("ASR is undefined when the clean metric is not positive");
  return 100.0 * (acc_before - acc_after) / acc_before;
}

double round_decimal(double v, int digits) {
  const double snapped = std::round(v * 1e9) / 1e9;
  const double scale = std::pow(10.0, digits);
  return std::round(snapped * scale) / scale;
}

template std::vector<int> retrieve_top1<float>(const ClipModel<float>&, std::span<const BasicImage<float>* const>,
                                               const TextBank<float>&);
template std::vector<int> retrieve_top1<double>(const ClipModel<double>&,
                                                std::span<const BasicImage<double>* const>,
                                                const TextBank<double>&);
template double recall_at_1<float>(const ClipModel<float>&, std::span<const BasicImage<float>* const>,
                                   const TextBank<float>&, std::span<const int>);
template double recall_at_1<double>(const ClipModel<double>&, std::span<const BasicImage<double>* const>,
                                    const TextBank<double>&, std::span<const int>);

}  // namespace mtadv
