#include "mtadv/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <stdexcept>

#include "mtadv/io.hpp"
#include "mtadv/rng.hpp"

namespace mtadv {

using nn::Act;
using nn::Mat;

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::clip_retrieval: return "clip_retrieval";
    case HeadKind::segmentation: return "segmentation";
    case HeadKind::detection: return "detection";
  }
  return "unknown";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "clip_retrieval") return HeadKind::clip_retrieval;
  if (s == "segmentation") return HeadKind::segmentation;
  if (s == "detection") return HeadKind::detection;
  throw std::invalid_argument("unknown head kind '" + s + "'");
}

std::string to_string(BackboneOrigin o) {
  return o == BackboneOrigin::scratch ? "scratch" : "derived_from_clip";
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> vocab = {"a",      "and",    "red",   "green",
                                                 "blue",   "circle", "square", "triangle"};
  return vocab;
}

int token_id(const std::string& token) {
  const auto& v = vocabulary();
  const auto it = std::find(v.begin(), v.end(), token);
  if (it == v.end()) throw std::invalid_argument("token '" + token + "' is not in the vocabulary");
  return static_cast<int>(it - v.begin());
}

std::vector<int> encode_caption(const std::string& caption) {
  std::vector<int> ids;
  std::size_t start = 0;
  while (start < caption.size()) {
    const std::size_t end = caption.find(' ', start);
    const std::string tok = caption.substr(start, end == std::string::npos ? end : end - start);
    if (!tok.empty()) ids.push_back(token_id(tok));
    if (end == std::string::npos) break;
    start = end + 1;
  }
  if (ids.empty()) throw std::invalid_argument("empty caption");
  return ids;
}

namespace {

template <typename T>
void fill_normal(Mat<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
}

template <typename T>
nn::Linear<T> make_linear(int in, int out, Rng& rng, double gain = 2.0) {
  nn::Linear<T> l{Mat<T>(in, out), Mat<T>::Zero(1, out)};
  fill_normal(l.w, rng, std::sqrt(gain / in));
  return l;
}

template <typename T>
BackboneParams<T> init_backbone(Rng& rng) {
  BackboneParams<T> p;
  p.conv1 = make_linear<T>(9 * 3, kConv1, rng);
  p.conv2 = make_linear<T>(9 * kConv1, kConv2, rng);
  p.conv3 = make_linear<T>(9 * kConv2, kConv3, rng);
  return p;
}

template <typename U, typename T>
BackboneParams<U> cast_backbone(const BackboneParams<T>& p) {
  return {p.conv1.template cast<U>(), p.conv2.template cast<U>(), p.conv3.template cast<U>()};
}

template <typename T>
BackboneParams<T> zero_backbone(const BackboneParams<T>& p) {
  return {p.conv1.zeros_like(), p.conv2.zeros_like(), p.conv3.zeros_like()};
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

template <typename T, typename U>
Act<T> pack_images(std::span<const BasicImage<U>* const> images) {
  if (images.empty()) throw std::invalid_argument("pack_images: empty batch");
  const Shape s = images.front()->shape();
  if (s.channels != 3) throw std::invalid_argument("pack_images: expected 3 channels");
  Act<T> x{static_cast<int>(images.size()), s.height, s.width, Mat<T>(images.size() * s.height * s.width, 3)};
  T* dst = x.m.data();
  for (const auto* img : images) {
    if (img->shape() != s) throw std::invalid_argument("pack_images: mixed image shapes");
    for (U v : *img) *dst++ = static_cast<T>((static_cast<double>(v) - kInputMean) / kInputStd);
  }
  return x;
}

template <typename T>
std::vector<BasicImage<T>> unpack_input_grad(const Mat<T>& d_norm, int n, int h, int w) {
  std::vector<BasicImage<T>> out;
  const std::size_t per = static_cast<std::size_t>(h) * w * 3;
  const T scale = static_cast<T>(1.0 / kInputStd);
  for (int b = 0; b < n; ++b) {
    std::vector<T> v(d_norm.data() + b * per, d_norm.data() + (b + 1) * per);
    for (auto& g : v) g *= scale;
    out.emplace_back(Shape{h, w, 3}, std::move(v));
  }
  return out;
}

template <typename T>
void backbone_forward(const BackboneParams<T>& p, const Act<T>& x, BackboneCache<T>& c) {
  c.n = x.n;
  c.h = x.h;
  c.w = x.w;
  c.cols1 = nn::im2col3(x, 2);
  c.pre1 = p.conv1.forward(c.cols1);
  c.a1 = Act<T>{x.n, nn::conv_out(x.h, 2), nn::conv_out(x.w, 2), nn::silu(c.pre1)};
  c.cols2 = nn::im2col3(c.a1, 2);
  c.pre2 = p.conv2.forward(c.cols2);
  c.a2 = Act<T>{x.n, nn::conv_out(c.a1.h, 2), nn::conv_out(c.a1.w, 2), nn::silu(c.pre2)};
  c.cols3 = nn::im2col3(c.a2, 1);
  c.pre3 = p.conv3.forward(c.cols3);
  c.a3 = Act<T>{x.n, c.a2.h, c.a2.w, nn::silu(c.pre3)};
}

template <typename T>
Mat<T> backbone_backward(const BackboneParams<T>& p, const BackboneCache<T>& c, const Mat<T>* d_a1,
                         const Mat<T>& d_a3, BackboneParams<T>* grads, bool need_dx) {
  const Mat<T> d_pre3 = nn::silu_backward(c.pre3, d_a3);
  const Mat<T> d_cols3 = p.conv3.backward(c.cols3, d_pre3, grads ? &grads->conv3 : nullptr, true);
  const Mat<T> d_a2 = nn::col2im3(d_cols3, c.n, c.a2.h, c.a2.w, kConv2, 1);
  const Mat<T> d_pre2 = nn::silu_backward(c.pre2, d_a2);
  const Mat<T> d_cols2 = p.conv2.backward(c.cols2, d_pre2, grads ? &grads->conv2 : nullptr, true);
  Mat<T> d_act1 = nn::col2im3(d_cols2, c.n, c.a1.h, c.a1.w, kConv1, 2);
  if (d_a1) d_act1 += *d_a1;
  const Mat<T> d_pre1 = nn::silu_backward(c.pre1, d_act1);
  const Mat<T> d_cols1 = p.conv1.backward(c.cols1, d_pre1, grads ? &grads->conv1 : nullptr, need_dx);
  if (!need_dx) return {};
  return nn::col2im3(d_cols1, c.n, c.h, c.w, 3, 2);
}

template <typename T>
std::string backbone_checksum(const BackboneParams<T>& p) {
  std::uint64_t h = fnv1a64("backbone");
  BackboneParams<T>::visit(p, [&](const std::string& name, const Mat<T>& m) {
    h = splitmix64(h ^ fnv1a64(name));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const float f = static_cast<float>(m.data()[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      h = (h ^ bits) * 0x100000001b3ULL;
    }
  });
  return hex64(h);
}

// ---------------------------------------------------------------- CLIP

template <typename T>
ClipModel<T> ClipModel<T>::init(std::uint64_t seed) {
  Rng rng(seed);
  ClipModel m;
  m.params.backbone = init_backbone<T>(rng);
  m.params.proj = make_linear<T>(kConv3, kEmbedDim, rng, 1.0);
  m.params.token_embedding = Mat<T>(static_cast<Eigen::Index>(vocabulary().size()), kEmbedDim);
  fill_normal(m.params.token_embedding, rng, 1.0);
  m.params.log_scale = Mat<T>::Constant(1, 1, static_cast<T>(std::log(1.0 / 0.07)));
  m.info.head_kind = HeadKind::clip_retrieval;
  m.info.backbone_origin = BackboneOrigin::scratch;
  return m;
}

template <typename T>
Mat<T> ClipModel<T>::embed_images(const Act<T>& x, ImageCache* cache) const {
  ImageCache local;
  ImageCache& c = cache ? *cache : local;
  backbone_forward(params.backbone, x, c.bb);
  c.pooled = nn::global_mean(c.bb.a3);
  c.raw = params.proj.forward(c.pooled);
  c.emb = nn::l2_normalize_rows(c.raw);
  return c.emb;
}

template <typename T>
Mat<T> ClipModel<T>::embed_images_backward(const ImageCache& c, const Mat<T>& d_emb,
                                           ClipParams<T>* grads, bool need_dx) const {
  const Mat<T> d_raw = nn::l2_normalize_backward(c.raw, c.emb, d_emb);
  const Mat<T> d_pooled = params.proj.backward(c.pooled, d_raw, grads ? &grads->proj : nullptr, true);
  const Mat<T> d_a3 = nn::global_mean_backward(d_pooled, c.bb.n, c.bb.a3.h, c.bb.a3.w);
  return backbone_backward<T>(params.backbone, c.bb, nullptr, d_a3, grads ? &grads->backbone : nullptr,
                           need_dx);
}

template <typename T>
Mat<T> ClipModel<T>::embed_texts(const std::vector<std::vector<int>>& token_ids) const {
  Mat<T> raw = Mat<T>::Zero(static_cast<Eigen::Index>(token_ids.size()), kEmbedDim);
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    for (int t : token_ids[i]) raw.row(i) += params.token_embedding.row(t);
    raw.row(i) /= static_cast<T>(token_ids[i].size());
  }
  return nn::l2_normalize_rows(raw);
}

template <typename T>
void ClipModel<T>::embed_texts_backward(const std::vector<std::vector<int>>& token_ids,
                                        const Mat<T>& d_emb, ClipParams<T>& grads) const {
  Mat<T> raw = Mat<T>::Zero(static_cast<Eigen::Index>(token_ids.size()), kEmbedDim);
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    for (int t : token_ids[i]) raw.row(i) += params.token_embedding.row(t);
    raw.row(i) /= static_cast<T>(token_ids[i].size());
  }
  const Mat<T> d_raw = nn::l2_normalize_backward(raw, nn::l2_normalize_rows(raw), d_emb);
  for (std::size_t i = 0; i < token_ids.size(); ++i)
    for (int t : token_ids[i])
      grads.token_embedding.row(t) += d_raw.row(i) / static_cast<T>(token_ids[i].size());
}

template <typename T>
T ClipModel<T>::logit_scale() const {
  return std::min(std::exp(params.log_scale(0, 0)), static_cast<T>(kMaxLogitScale));
}

template <typename T>
template <typename U>
ClipModel<U> ClipModel<T>::cast() const {
  ClipModel<U> m;
  m.params.backbone = cast_backbone<U>(params.backbone);
  m.params.proj = params.proj.template cast<U>();
  m.params.token_embedding = params.token_embedding.template cast<U>();
  m.params.log_scale = params.log_scale.template cast<U>();
  m.info = info;
  return m;
}

template <typename T>
ClipParams<T> ClipModel<T>::zero_grads() const {
  ClipParams<T> g;
  g.backbone = zero_backbone(params.backbone);
  g.proj = params.proj.zeros_like();
  g.token_embedding = Mat<T>::Zero(params.token_embedding.rows(), params.token_embedding.cols());
  g.log_scale = Mat<T>::Zero(1, 1);
  return g;
}

// ---------------------------------------------------------------- dense

template <typename T>
DenseModel<T> DenseModel<T>::init(HeadKind kind, std::uint64_t seed) {
  if (kind == HeadKind::clip_retrieval) throw std::invalid_argument("DenseModel: dense head required");
  Rng rng(seed);
  DenseModel m;
  m.params.backbone = init_backbone<T>(rng);
  const int in = kind == HeadKind::segmentation ? kConv3 + kConv1 : kConv3;
  m.params.head1 = make_linear<T>(in, kHeadHidden, rng);
  m.params.head2 = make_linear<T>(kHeadHidden, 10, rng, 1.0);
  m.info.head_kind = kind;
  return m;
}

template <typename T>
Mat<T> DenseModel<T>::logits(const Act<T>& x, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  backbone_forward(params.backbone, x, c.bb);
  if (kind() == HeadKind::segmentation) {
    const Act<T> up = nn::upsample2(c.bb.a3);
    c.head_h = up.h;
    c.head_w = up.w;
    c.head_in.resize(up.m.rows(), up.m.cols() + c.bb.a1.m.cols());
    c.head_in << up.m, c.bb.a1.m;
  } else {
    const Act<T> pooled = nn::avgpool2(c.bb.a3);
    c.head_h = pooled.h;
    c.head_w = pooled.w;
    c.head_in = pooled.m;
  }
  c.pre1 = params.head1.forward(c.head_in);
  c.h1 = nn::silu(c.pre1);
  Mat<T> out = params.head2.forward(c.h1);
  if (kind() == HeadKind::segmentation)
    return nn::upsample2(Act<T>{x.n, c.head_h, c.head_w, std::move(out)}).m;
  return out;
}

template <typename T>
Mat<T> DenseModel<T>::logits_backward(const Cache& c, const Mat<T>& d_logits, DenseParams<T>* grads,
                                      bool need_dx) const {
  const int n = c.bb.n;
  Mat<T> d_out = kind() == HeadKind::segmentation
                     ? nn::upsample2_backward(d_logits, n, c.head_h, c.head_w)
                     : d_logits;
  const Mat<T> d_h1 = params.head2.backward(c.h1, d_out, grads ? &grads->head2 : nullptr, true);
  const Mat<T> d_pre1 = nn::silu_backward(c.pre1, d_h1);
  const bool backbone_trainable = grads && !info.frozen_backbone;
  if (!need_dx && !backbone_trainable) {
    params.head1.backward(c.head_in, d_pre1, grads ? &grads->head1 : nullptr, false);
    return {};
  }
  const Mat<T> d_in = params.head1.backward(c.head_in, d_pre1, grads ? &grads->head1 : nullptr, true);
  BackboneParams<T>* bg = backbone_trainable ? &grads->backbone : nullptr;
  if (kind() == HeadKind::segmentation) {
    const Mat<T> d_up = d_in.leftCols(kConv3);
    const Mat<T> d_a1 = d_in.rightCols(kConv1);
    const Mat<T> d_a3 = nn::upsample2_backward(d_up, n, c.bb.a3.h, c.bb.a3.w);
    return backbone_backward(params.backbone, c.bb, &d_a1, d_a3, bg, need_dx);
  }
  const Mat<T> d_a3 = nn::avgpool2_backward(d_in, n, c.bb.a3.h, c.bb.a3.w);
  return backbone_backward<T>(params.backbone, c.bb, nullptr, d_a3, bg, need_dx);
}

template <typename T>
template <typename U>
DenseModel<U> DenseModel<T>::cast() const {
  DenseModel<U> m;
  m.params.backbone = cast_backbone<U>(params.backbone);
  m.params.head1 = params.head1.template cast<U>();
  m.params.head2 = params.head2.template cast<U>();
  m.info = info;
  return m;
}

template <typename T>
DenseParams<T> DenseModel<T>::zero_grads() const {
  return {zero_backbone(params.backbone), params.head1.zeros_like(), params.head2.zeros_like()};
}

template <typename T>
double cross_entropy(const Mat<T>& logits, std::span<const int> targets, Mat<T>* d_logits) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size())
    throw std::invalid_argument("cross_entropy: " + std::to_string(logits.rows()) + " rows vs " +
                                std::to_string(targets.size()) + " targets");
  const Mat<T> logp = nn::log_softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= logits.cols()) throw std::invalid_argument("cross_entropy: target out of range");
    loss -= static_cast<double>(logp(r, t));
  }
  if (d_logits) {
    *d_logits = logp.array().exp();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) (*d_logits)(r, targets[static_cast<std::size_t>(r)]) -= T(1);
    *d_logits *= static_cast<T>(inv_n);
  }
  return loss * inv_n;
}

// ---------------------------------------------------------------- checkpoints

nlohmann::json to_json(const ModelInfo& info) {
  return {{"head_kind", to_string(info.head_kind)},
          {"backbone_origin", to_string(info.backbone_origin)},
          {"frozen_backbone", info.frozen_backbone},
          {"backbone_checksum", info.backbone_checksum},
          {"source_backbone_checksum", info.source_backbone_checksum},
          {"hyperparams", info.hyperparams},
          {"metrics", info.metrics}};
}

ModelInfo model_info_from_json(const nlohmann::json& j) {
  ModelInfo info;
  info.head_kind = head_kind_from_string(j.at("head_kind").get<std::string>());
  info.backbone_origin = j.at("backbone_origin").get<std::string>() == "scratch"
                             ? BackboneOrigin::scratch
                             : BackboneOrigin::derived_from_clip;
  info.frozen_backbone = j.value("frozen_backbone", false);
  info.backbone_checksum = j.value("backbone_checksum", "");
  info.source_backbone_checksum = j.value("source_backbone_checksum", "");
  info.hyperparams = j.value("hyperparams", nlohmann::json::object());
  info.metrics = j.value("metrics", nlohmann::json::object());
  return info;
}

namespace {

constexpr char kMagic[8] = {'M', 'T', 'A', 'D', 'V', 'C', 'K', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw std::runtime_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

template <class Params>
void write_checkpoint(const std::filesystem::path& bin_path, const Params& params, const ModelInfo& info) {
  std::string out(kMagic, kMagic + 8);
  std::uint32_t count = 0;
  Params::visit(params, [&](const std::string&, const Mat<float>&) { ++count; });
  put_u32(out, count);
  nlohmann::json tensors = nlohmann::json::array();
  Params::visit(params, [&](const std::string& name, const Mat<float>& m) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, m.data() + i, sizeof bits);
      put_u32(out, bits);
    }
    tensors.push_back({{"name", name}, {"shape", {m.rows(), m.cols()}}});
  });
  write_file_atomic(bin_path, out);
  nlohmann::json manifest = to_json(info);
  manifest["format"] = "MTADVCK1";
  manifest["tensors"] = tensors;
  auto json_path = bin_path;
  json_path.replace_extension(".json");
  write_file_atomic(json_path, manifest.dump(2) + "\n");
}

std::map<std::string, Mat<float>> read_tensors(const std::filesystem::path& bin_path) {
  const std::string in = read_file(bin_path);
  if (in.size() < 12 || std::memcmp(in.data(), kMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint: " + bin_path.string());
  std::size_t pos = 8;
  const std::uint32_t count = get_u32(in, pos);
  std::map<std::string, Mat<float>> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t len = get_u32(in, pos);
    if (pos + len > in.size()) throw std::runtime_error("checkpoint truncated");
    std::string name = in.substr(pos, len);
    pos += len;
    const std::uint32_t rows = get_u32(in, pos), cols = get_u32(in, pos);
    Mat<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const std::uint32_t bits = get_u32(in, pos);
      std::memcpy(m.data() + i, &bits, sizeof bits);
    }
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

template <class Params>
void assign_tensors(Params& params, std::map<std::string, Mat<float>>& tensors,
                    const std::filesystem::path& path) {
  Params::visit(params, [&](const std::string& name, Mat<float>& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error(path.string() + ": missing tensor " + name);
    m = std::move(it->second);
  });
}

ModelInfo read_manifest(const std::filesystem::path& bin_path) {
  auto json_path = bin_path;
  json_path.replace_extension(".json");
  return model_info_from_json(nlohmann::json::parse(read_file(json_path)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& bin_path, const ClipModel<float>& m) {
  write_checkpoint(bin_path, m.params, m.info);
}

void save_checkpoint(const std::filesystem::path& bin_path, const DenseModel<float>& m) {
  write_checkpoint(bin_path, m.params, m.info);
}

ClipModel<float> load_clip_checkpoint(const std::filesystem::path& bin_path) {
  auto tensors = read_tensors(bin_path);
  ClipModel<float> m;
  m.info = read_manifest(bin_path);
  if (m.info.head_kind != HeadKind::clip_retrieval)
    throw std::runtime_error(bin_path.string() + " is not a CLIP checkpoint");
  assign_tensors(m.params, tensors, bin_path);
  return m;
}

DenseModel<float> load_dense_checkpoint(const std::filesystem::path& bin_path) {
  auto tensors = read_tensors(bin_path);
  DenseModel<float> m;
  m.info = read_manifest(bin_path);
  if (m.info.head_kind == HeadKind::clip_retrieval)
    throw std::runtime_error(bin_path.string() + " is not a dense checkpoint");
  assign_tensors(m.params, tensors, bin_path);
  return m;
}

// ---------------------------------------------------------------- instantiations

#define MTADV_INSTANTIATE(T)                                                                      \
  template Act<T> pack_images<T, double>(std::span<const BasicImage<double>* const>);            \
  template Act<T> pack_images<T, float>(std::span<const BasicImage<float>* const>);              \
  template std::vector<BasicImage<T>> unpack_input_grad<T>(const Mat<T>&, int, int, int);        \
  template void backbone_forward<T>(const BackboneParams<T>&, const Act<T>&, BackboneCache<T>&); \
  template Mat<T> backbone_backward<T>(const BackboneParams<T>&, const BackboneCache<T>&,        \
                                       const Mat<T>*, const Mat<T>&, BackboneParams<T>*, bool);   \
  template std::string backbone_checksum<T>(const BackboneParams<T>&);                           \
  template class ClipModel<T>;                                                                    \
  template class DenseModel<T>;                                                                   \
  template double cross_entropy<T>(const Mat<T>&, std::span<const int>, Mat<T>*);

MTADV_INSTANTIATE(float)
MTADV_INSTANTIATE(double)

template ClipModel<double> ClipModel<float>::cast<double>() const;
template ClipModel<float> ClipModel<float>::cast<float>() const;
template ClipModel<float> ClipModel<double>::cast<float>() const;
template DenseModel<double> DenseModel<float>::cast<double>() const;
template DenseModel<float> DenseModel<float>::cast<float>() const;
template DenseModel<float> DenseModel<double>::cast<float>() const;

}  // namespace mtadv
