#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "mtadv/dataset.hpp"
#include "mtadv/errors.hpp"
#include "mtadv/io.hpp"
#include "mtadv/metrics.hpp"
#include "mtadv/models.hpp"
#include "mtadv/training.hpp"

using namespace mtadv;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mtadv-test-" + name);
  fs::remove_all(p);
  return p;
}

DatasetSpec tiny(std::uint64_t seed, int train = 40) {
  DatasetSpec s;
  s.train_count = train;
  s.val_count = 5;
  s.test_count = 10;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Dataset, SingleShapeCaptionMatchesMask) {
  DatasetSpec s = tiny(0);
  s.min_shapes = s.max_shapes = 1;
  const Dataset ds = generate_dataset(s);
  for (const auto& smp : ds.train) {
    std::set<int> present(smp.seg_mask.begin(), smp.seg_mask.end());
    present.erase(0);
    ASSERT_EQ(present.size(), 1u);
    const int c = *present.begin();
    EXPECT_EQ(smp.caption, "a " + std::string(kColorNames[class_color(c)]) + " " + kShapeNames[class_shape(c)]);
    EXPECT_EQ(smp.classes, std::vector<int>{c});
  }
}

TEST(Dataset, CaptionsMentionExactlyTheMaskClasses) {
  const Dataset ds = generate_dataset(tiny(3, 100));
  for (const auto& smp : ds.train) {
    std::set<int> present(smp.seg_mask.begin(), smp.seg_mask.end());
    present.erase(0);
    EXPECT_EQ(std::vector<int>(present.begin(), present.end()), smp.classes);
    EXPECT_EQ(caption_for(smp.classes), smp.caption);
    for (int v : smp.seg_mask) ASSERT_TRUE(v >= 0 && v < kNumClasses);
    EXPECT_TRUE(smp.image.is_feasible());
  }
}

TEST(Dataset, DeterministicForSpecAndSeed) {
  const Dataset a = generate_dataset(tiny(5)), b = generate_dataset(tiny(5)), c = generate_dataset(tiny(6));
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].image, b.train[i].image);
    EXPECT_EQ(a.train[i].seg_mask, b.train[i].seg_mask);
    EXPECT_EQ(a.train[i].cell_labels, b.train[i].cell_labels);
  }
  EXPECT_NE(a.train[0].image, c.train[0].image);
}

TEST(Dataset, ClassFrequenciesNearUniform) {
  const Dataset ds = generate_dataset(tiny(9, 1000));
  std::map<int, int> counts;
  int total = 0;
  for (const auto& s : ds.train)
    for (int c : s.classes) ++counts[c], ++total;
  const double uniform = static_cast<double>(total) / kNumForeground;
  for (int c = 1; c <= kNumForeground; ++c) {
    EXPECT_GE(counts[c], 0.7 * uniform) << class_name(c);
    EXPECT_LE(counts[c], 1.3 * uniform) << class_name(c);
  }
}

TEST(Dataset, InvalidSpecNamesField) {
  DatasetSpec s = tiny(0);
  s.image_size = 8;
  try {
    s.validate();
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("image_size"), std::string::npos) << e.what();
  }
  s = tiny(0);
  s.max_shapes = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Dataset, SaveLoadRoundTripAndChecksum) {
  const fs::path a = scratch_dir("ds-a"), b = scratch_dir("ds-b");
  const Dataset ds = generate_dataset(tiny(4));
  save_dataset(ds, a);
  save_dataset(generate_dataset(tiny(4)), b);
  EXPECT_EQ(tree_checksum(a), tree_checksum(b));
  const Dataset back = load_dataset(a);
  ASSERT_EQ(back.test.size(), ds.test.size());
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    EXPECT_EQ(back.test[i].id, ds.test[i].id);
    EXPECT_EQ(back.test[i].image, ds.test[i].image);
    EXPECT_EQ(back.test[i].seg_mask, ds.test[i].seg_mask);
    EXPECT_EQ(back.test[i].cell_labels, ds.test[i].cell_labels);
    EXPECT_EQ(back.test[i].caption, ds.test[i].caption);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Vocabulary, TokenizesCaptionsAndRejectsUnknownTokens) {
  EXPECT_EQ(tokenize("a red circle and a blue square").size(), 7u);
  EXPECT_FALSE(encode_caption("a red circle").empty());
  EXPECT_ANY_THROW(encode_caption("a purple circle"));
}

TEST(ToyClip, EmbeddingsAreUnitNorm) {
  const Dataset ds = generate_dataset(tiny(2));
  const ClipModel<double> m = ClipModel<double>::init(4);
  std::vector<const BasicImage<double>*> ptrs;
  for (const auto& s : ds.test) ptrs.push_back(&s.image);
  const auto emb = m.embed_images(pack_images<double, double>(ptrs), nullptr);
  for (Eigen::Index r = 0; r < emb.rows(); ++r) EXPECT_NEAR(emb.row(r).norm(), 1.0, 1e-9);
  const auto txt = m.embed_texts({encode_caption(ds.test[0].caption), encode_caption("a green triangle")});
  for (Eigen::Index r = 0; r < txt.rows(); ++r) EXPECT_NEAR(txt.row(r).norm(), 1.0, 1e-9);
}

TEST(ToyClip, UntrainedRecallIsNearChance) {
  DatasetSpec s = tiny(8);
  s.test_count = 200;
  const Dataset ds = generate_dataset(s);
  double mean = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) mean += evaluate_recall(ClipModel<double>::init(seed), ds.test) / 5;
  const double chance = 1.0 / static_cast<double>(unique_captions(ds.test).size());
  EXPECT_LT(mean, 10 * chance);
}

TEST(ToyClip, GateFailureIsReported) {
  const Dataset ds = generate_dataset(tiny(1));
  TrainHyperparams hp;
  hp.epochs = 1;
  hp.gate = 1.0;
  EXPECT_THROW(train_toy_clip(ds, hp, 1), GateFailure);
}

TEST(DerivedModel, StartsFromClipBackboneAndMovesAway) {
  const Dataset ds = generate_dataset(tiny(1, 64));
  TrainHyperparams hp;
  hp.epochs = 1;
  hp.gate = 0.0;
  const ClipModel<float> clip = train_toy_clip(ds, hp, 1);
  const DenseModel<float> seg = derive_dense_model(clip, HeadKind::segmentation, ds, hp, 2);
  EXPECT_EQ(seg.info.backbone_origin, BackboneOrigin::derived_from_clip);
  EXPECT_EQ(seg.info.source_backbone_checksum, backbone_checksum(clip.params.backbone));
  EXPECT_NE(seg.info.backbone_checksum, seg.info.source_backbone_checksum);

  const DenseModel<float> control = derive_dense_model(clip, HeadKind::detection, ds, hp, 3, true);
  EXPECT_TRUE(control.info.frozen_backbone);
  EXPECT_EQ(control.info.backbone_origin, BackboneOrigin::scratch);
  EXPECT_EQ(backbone_checksum(control.params.backbone),
            backbone_checksum(DenseModel<float>::init(HeadKind::detection, Rng(3).next()).params.backbone));
}

TEST(Checkpoint, RoundTripIsExact) {
  const fs::path dir = scratch_dir("ckpt");
  fs::create_directories(dir);
  ClipModel<float> clip = ClipModel<float>::init(5);
  clip.info.hyperparams = {{"epochs", 3}};
  save_checkpoint(dir / "clip.bin", clip);
  const ClipModel<float> back = load_clip_checkpoint(dir / "clip.bin");
  EXPECT_EQ(backbone_checksum(back.params.backbone), backbone_checksum(clip.params.backbone));
  EXPECT_EQ(back.params.token_embedding, clip.params.token_embedding);
  EXPECT_EQ(back.info.hyperparams, clip.info.hyperparams);
  EXPECT_TRUE(fs::exists(dir / "clip.json"));

  const DenseModel<float> det = DenseModel<float>::init(HeadKind::detection, 6);
  save_checkpoint(dir / "det.bin", det);
  const DenseModel<float> dback = load_dense_checkpoint(dir / "det.bin");
  EXPECT_EQ(dback.kind(), HeadKind::detection);
  EXPECT_EQ(dback.params.head2.w, det.params.head2.w);
  EXPECT_THROW(load_clip_checkpoint(dir / "det.bin"), std::runtime_error);
  fs::remove_all(dir);
}
