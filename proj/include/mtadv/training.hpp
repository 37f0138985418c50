#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "mtadv/dataset.hpp"
#include "mtadv/models.hpp"
#include "mtadv/objectives.hpp"

namespace mtadv {

struct TrainHyperparams {
  int epochs = 12;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double final_lr_fraction = 0.05;  // cosine decay floor
  double gate = 0.70;               // Recall@1 for CLIP, mIoU / cell-mAP for dense models
  double noise_augment = 0.0;       // half-width of uniform pixel noise added to training images
};

nlohmann::json to_json(const TrainHyperparams& hp);
TrainHyperparams train_hyperparams_from_json(const nlohmann::json& j, const std::string& where,
                                             TrainHyperparams defaults);

using ProgressFn = std::function<void(const std::string&)>;

/// Contrastive training of the toy CLIP (symmetric InfoNCE with a learned
/// logit scale; identical captions count as positives for each other).
/// Throws GateFailure when test Recall@1 is below hp.gate.
ClipModel<float> train_toy_clip(const Dataset& ds, const TrainHyperparams& hp, std::uint64_t seed,
                                const ProgressFn& progress = {});

/// Fine-tunes a dense model whose backbone starts from the CLIP backbone.
/// With `frozen_random_control`, the backbone is instead randomly initialized
/// and frozen, and no gate is enforced.
DenseModel<float> derive_dense_model(const ClipModel<float>& clip, HeadKind kind, const Dataset& ds,
                                     const TrainHyperparams& hp, std::uint64_t seed,
                                     bool frozen_random_control = false,
                                     const ProgressFn& progress = {});

/// Test-bank Recall@1 (bank = distinct test captions).
template <typename T>
double evaluate_recall(const ClipModel<T>& model, std::span<const SyntheticSample> samples);

/// mIoU (segmentation) or cell-mAP (detection) over the samples.
template <typename T>
double evaluate_dense(const DenseModel<T>& model, std::span<const SyntheticSample> samples);

/// Dense logits for a batch of images, as doubles.
template <typename T>
nn::Mat<double> dense_logits(const DenseModel<T>& model, std::span<const BasicImage<T>* const> images);

}  // namespace mtadv
