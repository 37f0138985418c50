#pragma once

// Toy stand-ins for CLIP and its dense-prediction derivatives. Every model
// shares one convolutional backbone architecture and one input
// normalization, so a single perturbation is meaningful to all of them.
//
//   input 48x48x3 -> (x - 0.5) / 0.25
//   conv1 3x3/2  3->16  SiLU   24x24
//   conv2 3x3/2 16->32  SiLU   12x12
//   conv3 3x3/1 32->32  SiLU   12x12
//
// CLIP head: global mean -> linear 32->32 -> L2 normalize.
// Text encoder: mean of token embeddings -> L2 normalize.
// Segmentation head: [up2(conv3), conv1] -> 1x1 48->32 SiLU -> 1x1 32->10 -> up2.
// Detection head: avgpool2(conv3) (6x6 cells) -> 1x1 32->32 SiLU -> 1x1 32->10.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtadv/image.hpp"
#include "mtadv/nn.hpp"

namespace mtadv {

enum class HeadKind { clip_retrieval, segmentation, detection };
enum class BackboneOrigin { scratch, derived_from_clip };

std::string to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);
std::string to_string(BackboneOrigin o);

inline constexpr double kInputMean = 0.5;
inline constexpr double kInputStd = 0.25;
inline constexpr int kConv1 = 16;
inline constexpr int kConv2 = 32;
inline constexpr int kConv3 = 32;
inline constexpr int kEmbedDim = 32;
inline constexpr int kHeadHidden = 32;
inline constexpr double kMaxLogitScale = 100.0;

/// Closed caption vocabulary; throws on unknown tokens.
const std::vector<std::string>& vocabulary();
int token_id(const std::string& token);
std::vector<int> encode_caption(const std::string& caption);

struct ModelInfo {
  HeadKind head_kind = HeadKind::clip_retrieval;
  BackboneOrigin backbone_origin = BackboneOrigin::scratch;
  bool frozen_backbone = false;
  std::string backbone_checksum;         // of this model's backbone weights
  std::string source_backbone_checksum;  // CLIP backbone a derived model started from
  nlohmann::json hyperparams = nlohmann::json::object();
  nlohmann::json metrics = nlohmann::json::object();
};

template <typename T>
struct BackboneParams {
  nn::Linear<T> conv1, conv2, conv3;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    f("backbone.conv1.weight", s.conv1.w);
    f("backbone.conv1.bias", s.conv1.b);
    f("backbone.conv2.weight", s.conv2.w);
    f("backbone.conv2.bias", s.conv2.b);
    f("backbone.conv3.weight", s.conv3.w);
    f("backbone.conv3.bias", s.conv3.b);
  }
};

template <typename T>
struct BackboneCache {
  nn::Mat<T> cols1, pre1, cols2, pre2, cols3, pre3;
  nn::Act<T> a1, a2, a3;
  int n = 0, h = 0, w = 0;
};

/// Stacks images into a normalized activation batch.
template <typename T, typename U>
nn::Act<T> pack_images(std::span<const BasicImage<U>* const> images);

/// Splits a gradient w.r.t. the normalized batch back into per-image
/// gradients in pixel units.
template <typename T>
std::vector<BasicImage<T>> unpack_input_grad(const nn::Mat<T>& d_norm, int n, int h, int w);

template <typename T>
void backbone_forward(const BackboneParams<T>& p, const nn::Act<T>& x, BackboneCache<T>& c);

/// `d_a1` may be null. Returns d/d(normalized input) when need_dx.
template <typename T>
nn::Mat<T> backbone_backward(const BackboneParams<T>& p, const BackboneCache<T>& c,
                             const nn::Mat<T>* d_a1, const nn::Mat<T>& d_a3,
                             BackboneParams<T>* grads, bool need_dx);

template <typename T>
std::string backbone_checksum(const BackboneParams<T>& p);

template <typename T>
struct ClipParams {
  BackboneParams<T> backbone;
  nn::Linear<T> proj;
  nn::Mat<T> token_embedding;  // vocab x D
  nn::Mat<T> log_scale;        // 1 x 1

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    BackboneParams<T>::visit(s.backbone, f);
    f("clip.proj.weight", s.proj.w);
    f("clip.proj.bias", s.proj.b);
    f("clip.token_embedding", s.token_embedding);
    f("clip.log_scale", s.log_scale);
  }
};

template <typename T>
class ClipModel {
 public:
  struct ImageCache {
    BackboneCache<T> bb;
    nn::Mat<T> pooled, raw, emb;
  };

  ClipParams<T> params;
  ModelInfo info;

  static ClipModel init(std::uint64_t seed);

  /// n x D unit-norm embeddings. Fills `cache` when non-null.
  nn::Mat<T> embed_images(const nn::Act<T>& x, ImageCache* cache) const;
  /// Returns d/d(normalized input) when need_dx.
  nn::Mat<T> embed_images_backward(const ImageCache& cache, const nn::Mat<T>& d_emb,
                                   ClipParams<T>* grads, bool need_dx) const;

  nn::Mat<T> embed_texts(const std::vector<std::vector<int>>& token_ids) const;
  void embed_texts_backward(const std::vector<std::vector<int>>& token_ids,
                            const nn::Mat<T>& d_emb, ClipParams<T>& grads) const;

  /// exp(log_scale) clamped to kMaxLogitScale; temperature = 1 / scale.
  T logit_scale() const;
  double temperature() const { return 1.0 / static_cast<double>(logit_scale()); }

  template <typename U>
  ClipModel<U> cast() const;
  ClipParams<T> zero_grads() const;
};

template <typename T>
struct DenseParams {
  BackboneParams<T> backbone;
  nn::Linear<T> head1, head2;

  template <class Self, class F>
  static void visit(Self& s, F&& f) {
    BackboneParams<T>::visit(s.backbone, f);
    f("head.fc1.weight", s.head1.w);
    f("head.fc1.bias", s.head1.b);
    f("head.fc2.weight", s.head2.w);
    f("head.fc2.bias", s.head2.b);
  }
};

template <typename T>
class DenseModel {
 public:
  struct Cache {
    BackboneCache<T> bb;
    nn::Mat<T> head_in, pre1, h1;
    int head_h = 0, head_w = 0;
  };

  DenseParams<T> params;
  ModelInfo info;

  static DenseModel init(HeadKind kind, std::uint64_t seed);
  HeadKind kind() const { return info.head_kind; }

  /// Segmentation: (n*H*W) x 10 pixel logits. Detection: (n*G*G) x 10 cell
  /// logits, class 0 = no object.
  nn::Mat<T> logits(const nn::Act<T>& x, Cache* cache) const;
  nn::Mat<T> logits_backward(const Cache& cache, const nn::Mat<T>& d_logits, DenseParams<T>* grads,
                             bool need_dx) const;

  template <typename U>
  DenseModel<U> cast() const;
  DenseParams<T> zero_grads() const;
};

/// Mean cross-entropy of row logits against integer targets; writes
/// d(loss)/d(logits) when `d_logits` is non-null.
template <typename T>
double cross_entropy(const nn::Mat<T>& logits, std::span<const int> targets, nn::Mat<T>* d_logits);

// Checkpoints: flat little-endian binary "MTADVCK1", u32 count, then per
// tensor {u32 name_len, name, u32 rows, u32 cols, f32[rows*cols]}, plus a
// JSON manifest next to it (<stem>.json).
void save_checkpoint(const std::filesystem::path& bin_path, const ClipModel<float>& m);
void save_checkpoint(const std::filesystem::path& bin_path, const DenseModel<float>& m);
ClipModel<float> load_clip_checkpoint(const std::filesystem::path& bin_path);
DenseModel<float> load_dense_checkpoint(const std::filesystem::path& bin_path);

nlohmann::json to_json(const ModelInfo& info);
ModelInfo model_info_from_json(const nlohmann::json& j);

}  // namespace mtadv
