#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtadv/dataset.hpp"
#include "mtadv/models.hpp"
#include "mtadv/perturbation.hpp"

namespace mtadv {

inline constexpr double kSmoothing = 1e-12;

/// Candidate captions with their unit-norm text embeddings (one row each).
template <typename T>
struct TextBank {
  std::vector<std::string> captions;
  nn::Mat<T> embeddings;

  std::size_t size() const { return captions.size(); }
  /// Index of `caption`, or -1.
  int find(const std::string& caption) const;
};

template <typename T>
TextBank<T> build_text_bank(const ClipModel<T>& model, std::vector<std::string> captions);

/// Distinct captions of `samples` in order of first appearance.
std::vector<std::string> unique_captions(std::span<const SyntheticSample> samples);

struct PredictionDistribution {
  std::vector<double> probs;
  std::size_t size() const { return probs.size(); }
};

/// softmax(similarities / temperature), then additive floor smoothing
/// (q + eps) / (1 + N eps) so every entry is strictly positive.
PredictionDistribution softmax_distribution(std::span<const double> similarities, double temperature);

template <typename T>
PredictionDistribution clip_distribution(const ClipModel<T>& model, const BasicImage<T>& image,
                                         const TextBank<T>& bank, double temperature);

/// KL(p || q) = sum p_i log(p_i / q_i), in nats.
double kl_divergence(const PredictionDistribution& p, const PredictionDistribution& q);

struct TaskTarget {
  HeadKind kind = HeadKind::segmentation;
  std::vector<int> labels;  // per pixel (segmentation) or per cell (detection)
};

TaskTarget task_target(const SyntheticSample& sample, HeadKind kind);

/// Mean per-position cross-entropy of the dense model and its input gradient.
template <typename T>
LossGrad<T> task_objective(const DenseModel<T>& model, const BasicImage<T>& image,
                           const TaskTarget& target, bool need_grad = true);

/// KL(p || q(x)) where p is the clean prediction, computed once at
/// construction, and q(x) the prediction at the current image.
template <typename T>
class ClipKlObjective {
 public:
  ClipKlObjective(const ClipModel<T>& model, const TextBank<T>& bank, const BasicImage<T>& x_clean,
                  double temperature);

  LossGrad<T> operator()(const BasicImage<T>& x, bool need_grad = true) const;
  const PredictionDistribution& clean() const { return p_; }

 private:
  const ClipModel<T>* model_;
  const TextBank<T>* bank_;
  double temperature_;
  PredictionDistribution p_;
};

template <typename T>
struct JointEval {
  LossGrad<T> total;
  LossGrad<T> task;
  LossGrad<T> kl;
  std::optional<double> cosine;  // between task and KL gradients
};

/// L_task + w * KL(p || q). With w == 0 the KL term is not evaluated.
template <typename T>
JointEval<T> joint_objective(const DenseModel<T>& task_model, const ClipKlObjective<T>& kl,
                             const BasicImage<T>& image, const TaskTarget& target, double weight,
                             bool need_grad = true);

/// Cosine similarity; nullopt when either vector has zero norm.
template <typename T>
std::optional<double> gradient_cosine(const BasicImage<T>& a, const BasicImage<T>& b);

struct ConflictEntry {
  std::string sample_id;
  std::optional<double> cosine;  // nullopt: a zero gradient, excluded from aggregates
};

struct ConflictReport {
  std::vector<ConflictEntry> entries;
  std::optional<double> median;
  std::optional<double> mean;
};

/// Per-sample cosine between the task-loss and KL input gradients. The KL
/// gradient vanishes at the clean image (p == q), so both gradients are taken
/// at a seeded uniform probe x + U(-probe_radius, probe_radius).
template <typename T>
ConflictReport gradient_conflict_report(const DenseModel<T>& task_model, const ClipModel<T>& clip_model,
                                        std::span<const SyntheticSample> samples,
                                        const TextBank<T>& bank, double temperature,
                                        double probe_radius, std::uint64_t seed);

}  // namespace mtadv
