#include "mtadv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mtadv/errors.hpp"
#include "mtadv/json_util.hpp"
#include "mtadv/metrics.hpp"
#include "mtadv/rng.hpp"

namespace mtadv {

using nn::Mat;

nlohmann::json to_json(const TrainHyperparams& hp) {
  return {{"epochs", hp.epochs},
          {"batch_size", hp.batch_size},
          {"learning_rate", hp.learning_rate},
          {"final_lr_fraction", hp.final_lr_fraction},
          {"gate", hp.gate},
          {"noise_augment", hp.noise_augment}};
}

TrainHyperparams train_hyperparams_from_json(const nlohmann::json& j, const std::string& where,
                                             TrainHyperparams hp) {
  JsonReader r(j, where);
  r.get("epochs", hp.epochs);
  r.get("batch_size", hp.batch_size);
  r.get("learning_rate", hp.learning_rate);
  r.get("final_lr_fraction", hp.final_lr_fraction);
  r.get("gate", hp.gate);
  r.get("noise_augment", hp.noise_augment);
  r.finish();
  if (hp.epochs < 1) throw ConfigError(where + ".epochs: must be >= 1");
  if (hp.batch_size < 2) throw ConfigError(where + ".batch_size: must be >= 2");
  if (!(hp.learning_rate > 0.0)) throw ConfigError(where + ".learning_rate: must be positive");
  if (!(hp.noise_augment >= 0.0 && hp.noise_augment < 0.5))
    throw ConfigError(where + ".noise_augment: must be in [0, 0.5)");
  if (!(hp.gate >= 0.0 && hp.gate <= 1.0)) throw ConfigError(where + ".gate: must be in [0, 1]");
  return hp;
}

namespace {

class Adam {
 public:
  explicit Adam(std::vector<Mat<float>*> params) : params_(std::move(params)) {
    for (auto* p : params_) {
      m_.push_back(Mat<float>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<float>::Zero(p->rows(), p->cols()));
    }
  }

  void step(const std::vector<Mat<float>*>& grads, double lr) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const float c1 = static_cast<float>(lr / (1.0 - std::pow(b1, t_)));
    const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(b2, t_)));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!grads[k]) continue;
      m_[k] = b1 * m_[k] + (1.0f - static_cast<float>(b1)) * *grads[k];
      v_[k] = b2 * v_[k] + (1.0f - static_cast<float>(b2)) * grads[k]->cwiseProduct(*grads[k]);
      params_[k]->array() -= c1 * m_[k].array() / ((v_[k].array() * c2).sqrt() + static_cast<float>(eps));
    }
  }

 private:
  std::vector<Mat<float>*> params_;
  std::vector<Mat<float>> m_, v_;
  int t_ = 0;
};

template <class Params>
std::vector<Mat<float>*> pointers(Params& p) {
  std::vector<Mat<float>*> out;
  Params::visit(p, [&](const std::string&, Mat<float>& m) { out.push_back(&m); });
  return out;
}

double cosine_lr(const TrainHyperparams& hp, long step, long total) {
  const double progress = total > 1 ? static_cast<double>(step) / static_cast<double>(total - 1) : 1.0;
  const double floor = hp.final_lr_fraction;
  return hp.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(3.141592653589793 * progress)));
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
  return idx;
}

/// Packs a batch, optionally with uniform pixel noise drawn from `rng`.
nn::Act<float> pack_batch(const std::vector<const ImageTensor*>& imgs, double noise, Rng& rng) {
  if (noise <= 0.0) return pack_images<float, double>(imgs);
  std::vector<ImageTensor> noisy;
  noisy.reserve(imgs.size());
  for (const auto* im : imgs) {
    ImageTensor n = *im;
    for (auto& v : n) v = std::clamp(v + rng.uniform(-noise, noise), 0.0, 1.0);
    noisy.push_back(std::move(n));
  }
  std::vector<const ImageTensor*> ptrs;
  for (const auto& n : noisy) ptrs.push_back(&n);
  return pack_images<float, double>(ptrs);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

template <typename T>
double evaluate_recall(const ClipModel<T>& model, std::span<const SyntheticSample> samples) {
  const TextBank<T> bank = build_text_bank(model, unique_captions(samples));
  std::vector<BasicImage<T>> images;
  std::vector<int> correct;
  for (const auto& s : samples) {
    images.push_back(s.image.template cast<T>());
    correct.push_back(bank.find(s.caption));
  }
  std::vector<const BasicImage<T>*> ptrs;
  for (const auto& im : images) ptrs.push_back(&im);
  return recall_at_1(model, std::span<const BasicImage<T>* const>(ptrs), bank, correct);
}

template <typename T>
Mat<double> dense_logits(const DenseModel<T>& model, std::span<const BasicImage<T>* const> images) {
  return model.logits(pack_images<T, T>(images), nullptr).template cast<double>();
}

template <typename T>
double evaluate_dense(const DenseModel<T>& model, std::span<const SyntheticSample> samples) {
  IouCounts counts;
  std::vector<CellPrediction> preds;
  std::vector<CellLabel> gts;
  constexpr std::size_t kChunk = 1;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<BasicImage<T>> images;
    for (std::size_t i = start; i < end; ++i) images.push_back(samples[i].image.template cast<T>());
    std::vector<const BasicImage<T>*> ptrs;
    for (const auto& im : images) ptrs.push_back(&im);
    const Mat<double> logits = dense_logits(model, std::span<const BasicImage<T>* const>(ptrs));
    if (model.kind() == HeadKind::segmentation) {
      const auto pred = seg_predictions(logits);
      const std::size_t per = samples[start].seg_mask.size();
      for (std::size_t i = start; i < end; ++i)
        counts.add(std::span<const int>(pred).subspan((i - start) * per, per), samples[i].seg_mask);
    } else {
      const auto p = cell_predictions(logits);
      preds.insert(preds.end(), p.begin(), p.end());
      for (std::size_t i = start; i < end; ++i)
        gts.insert(gts.end(), samples[i].cell_labels.begin(), samples[i].cell_labels.end());
    }
  }
  return model.kind() == HeadKind::segmentation ? counts.miou() : cell_map(preds, gts);
}

ClipModel<float> train_toy_clip(const Dataset& ds, const TrainHyperparams& hp, std::uint64_t seed,
                                const ProgressFn& progress) {
  Rng rng(seed);
  ClipModel<float> model = ClipModel<float>::init(rng.next());
  Adam adam(pointers(model.params));

  std::vector<std::vector<int>> tokens;
  for (const auto& s : ds.train) tokens.push_back(encode_caption(s.caption));

  const std::size_t n = ds.train.size();
  const std::size_t bs = static_cast<std::size_t>(hp.batch_size);
  const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total = steps_per_epoch * hp.epochs;
  long step = 0;

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const std::size_t b = end - start;
      std::vector<const ImageTensor*> imgs;
      std::vector<std::vector<int>> batch_tokens;
      for (std::size_t k = start; k < end; ++k) {
        imgs.push_back(&ds.train[order[k]].image);
        batch_tokens.push_back(tokens[order[k]]);
      }
      const nn::Act<float> x = pack_batch(imgs, hp.noise_augment, rng);
      ClipModel<float>::ImageCache cache;
      const Mat<float> emb = model.embed_images(x, &cache);
      const Mat<float> temb = model.embed_texts(batch_tokens);
      const float scale = model.logit_scale();
      const Mat<float> cos = emb * temb.transpose();
      const Mat<float> logits = scale * cos;

      Mat<float> target = Mat<float>::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(b));
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < b; ++j)
          target(i, j) = ds.train[order[start + i]].caption == ds.train[order[start + j]].caption;
      // Rows and columns of `target` have the same sums (it is symmetric).
      for (std::size_t i = 0; i < b; ++i) target.row(i) /= target.row(i).sum();

      const Mat<float> lp_rows = nn::log_softmax_rows(logits);
      const Mat<float> logits_t = logits.transpose();
      const Mat<float> lp_cols = nn::log_softmax_rows(logits_t);
      const double loss = -0.5 * ((target.array() * lp_rows.array()).sum() +
                                  (target.array() * lp_cols.array()).sum()) / static_cast<double>(b);
      epoch_loss += loss;

      const float inv_b = 1.0f / static_cast<float>(b);
      const Mat<float> d_logits =
          0.5f * inv_b * ((Mat<float>(lp_rows.array().exp()) - target) +
                          (Mat<float>(lp_cols.array().exp()) - target).transpose());

      ClipParams<float> grads = model.zero_grads();
      const Mat<float> d_emb = scale * d_logits * temb;
      const Mat<float> d_temb = scale * d_logits.transpose() * emb;
      model.embed_images_backward(cache, d_emb, &grads, false);
      model.embed_texts_backward(batch_tokens, d_temb, grads);
      if (std::exp(model.params.log_scale(0, 0)) < kMaxLogitScale)
        grads.log_scale(0, 0) = scale * (d_logits.array() * cos.array()).sum();

      adam.step(pointers(grads), cosine_lr(hp, step++, total));
    }
    if (progress)
      progress("clip epoch " + std::to_string(epoch + 1) + "/" + std::to_string(hp.epochs) +
               " loss " + fmt("%.4f", epoch_loss / steps_per_epoch));
  }

  const double recall = evaluate_recall(model, ds.test);
  const double val_recall = ds.val.empty() ? recall : evaluate_recall(model, ds.val);
  model.info.backbone_checksum = backbone_checksum(model.params.backbone);
  model.info.hyperparams = to_json(hp);
  model.info.metrics = {{"test_recall_at_1", recall},
                        {"val_recall_at_1", val_recall},
                        {"temperature", model.temperature()}};
  if (progress) progress("clip test Recall@1 " + fmt("%.4f", recall));
  if (recall < hp.gate)
    throw GateFailure("toy CLIP test Recall@1 " + fmt("%.4f", recall) + " is below the gate " +
                      fmt("%.2f", hp.gate));
  return model;
}

DenseModel<float> derive_dense_model(const ClipModel<float>& clip, HeadKind kind, const Dataset& ds,
                                     const TrainHyperparams& hp, std::uint64_t seed,
                                     bool frozen_random_control, const ProgressFn& progress) {
  if (ds.spec.grid_size * 8 != ds.spec.image_size && kind == HeadKind::detection)
    throw std::invalid_argument("detection head needs grid_size == image_size / 8");
  Rng rng(seed);
  DenseModel<float> model = DenseModel<float>::init(kind, rng.next());
  if (frozen_random_control) {
    model.info.backbone_origin = BackboneOrigin::scratch;
    model.info.frozen_backbone = true;
  } else {
    model.params.backbone = clip.params.backbone;
    model.info.backbone_origin = BackboneOrigin::derived_from_clip;
    model.info.source_backbone_checksum = backbone_checksum(clip.params.backbone);
  }
  Adam adam(pointers(model.params));

  std::vector<TaskTarget> targets;
  for (const auto& s : ds.train) targets.push_back(task_target(s, kind));

  const std::size_t n = ds.train.size();
  const std::size_t bs = static_cast<std::size_t>(hp.batch_size);
  const long steps_per_epoch = static_cast<long>((n + bs - 1) / bs);
  const long total = steps_per_epoch * hp.epochs;
  long step = 0;
  const std::string tag = to_string(kind) + (frozen_random_control ? " control" : "");

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const auto order = shuffled(n, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      std::vector<const ImageTensor*> imgs;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        imgs.push_back(&ds.train[order[k]].image);
        const auto& t = targets[order[k]].labels;
        labels.insert(labels.end(), t.begin(), t.end());
      }
      DenseModel<float>::Cache cache;
      const Mat<float> logits = model.logits(pack_batch(imgs, hp.noise_augment, rng), &cache);
      Mat<float> d_logits;
      epoch_loss += cross_entropy<float>(logits, labels, &d_logits);
      DenseParams<float> grads = model.zero_grads();
      model.logits_backward(cache, d_logits, &grads, false);
      auto gptr = pointers(grads);
      if (frozen_random_control)
        for (std::size_t k = 0; k < 6; ++k) gptr[k] = nullptr;  // backbone tensors come first
      adam.step(gptr, cosine_lr(hp, step++, total));
    }
    if (progress)
      progress(tag + " epoch " + std::to_string(epoch + 1) + "/" + std::to_string(hp.epochs) +
               " loss " + fmt("%.4f", epoch_loss / steps_per_epoch));
  }

  const double metric = evaluate_dense(model, ds.test);
  const std::string name = kind == HeadKind::segmentation ? "test_miou" : "test_cell_map";
  model.info.backbone_checksum = backbone_checksum(model.params.backbone);
  model.info.hyperparams = to_json(hp);
  model.info.metrics = {{name, metric}};
  if (progress) progress(tag + " " + name + " " + fmt("%.4f", metric));
  if (!frozen_random_control && metric < hp.gate)
    throw GateFailure(tag + " " + name + " " + fmt("%.4f", metric) + " is below the gate " +
                      fmt("%.2f", hp.gate));
  return model;
}

template double evaluate_recall<float>(const ClipModel<float>&, std::span<const SyntheticSample>);
template double evaluate_recall<double>(const ClipModel<double>&, std::span<const SyntheticSample>);
template double evaluate_dense<float>(const DenseModel<float>&, std::span<const SyntheticSample>);
template double evaluate_dense<double>(const DenseModel<double>&, std::span<const SyntheticSample>);
template Mat<double> dense_logits<float>(const DenseModel<float>&, std::span<const BasicImage<float>* const>);
template Mat<double> dense_logits<double>(const DenseModel<double>&, std::span<const BasicImage<double>* const>);

}  // namespace mtadv
