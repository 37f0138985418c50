#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtadv/dataset.hpp"
#include "mtadv/models.hpp"
#include "mtadv/objectives.hpp"

namespace mtadv {

/// Index of the best caption per image (ties go to the lowest index), from an
/// images x captions similarity matrix.
std::vector<int> top1_from_similarity(const nn::Mat<double>& similarity);

/// Fraction of rows whose top-1 column equals `correct[row]`.
double recall_at_1(const nn::Mat<double>& similarity, std::span<const int> correct);

/// Image-to-text Recall@1 of the model over the bank.
template <typename T>
double recall_at_1(const ClipModel<T>& model, std::span<const BasicImage<T>* const> images,
                   const TextBank<T>& bank, std::span<const int> correct);

template <typename T>
std::vector<int> retrieve_top1(const ClipModel<T>& model, std::span<const BasicImage<T>* const> images,
                               const TextBank<T>& bank);

/// Per-class intersection and union pixel counts.
struct IouCounts {
  std::array<long long, kNumClasses> intersection{};
  std::array<long long, kNumClasses> union_{};

  void add(std::span<const int> pred, std::span<const int> gt);
  IouCounts& operator+=(const IouCounts& o);
  /// Mean over classes whose union is non-empty.
  double miou() const;
};

/// Mean IoU over classes present in gt or pred.
double miou(std::span<const int> pred, std::span<const int> gt, int num_classes = kNumClasses);

struct CellPrediction {
  double objectness = 0.0;
  int class_id = 0;
};

/// Cell-level mAP: per foreground class, detections are the cells predicted
/// as that class with objectness > 0, ranked by objectness (ties by cell
/// order); all-points interpolated AP; averaged over classes with at least
/// one ground-truth cell.
double cell_map(std::span<const CellPrediction> preds, std::span<const CellLabel> gts);

/// Objectness = 1 - p(empty); class = best foreground class.
std::vector<CellPrediction> cell_predictions(const nn::Mat<double>& cell_logits);

/// argmax class per pixel.
std::vector<int> seg_predictions(const nn::Mat<double>& pixel_logits);

class UndefinedAsr : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// 100 * (before - after) / before.
double asr(double acc_before, double acc_after);

/// Decimal rounding, half away from zero, after first snapping to 9 decimals
/// so that binary noise (78.74999999 for 78.75) does not flip the result.
double round_decimal(double v, int digits);

}  // namespace mtadv
