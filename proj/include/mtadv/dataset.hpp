#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtadv/image.hpp"

namespace mtadv {

inline constexpr int kNumColors = 3;
inline constexpr int kNumShapeKinds = 3;
inline constexpr int kNumForeground = kNumColors * kNumShapeKinds;
inline constexpr int kNumClasses = kNumForeground + 1;  // 0 = background

inline constexpr std::array<const char*, kNumColors> kColorNames = {"red", "green", "blue"};
inline constexpr std::array<const char*, kNumShapeKinds> kShapeNames = {"circle", "square",
                                                                         "triangle"};

/// Class id for a (color, shape) pair, in [1, 9].
constexpr int class_id(int color, int shape) { return 1 + color * kNumShapeKinds + shape; }
constexpr int class_color(int id) { return (id - 1) / kNumShapeKinds; }
constexpr int class_shape(int id) { return (id - 1) % kNumShapeKinds; }
std::string class_name(int id);

struct DatasetSpec {
  int image_size = 48;
  int min_shapes = 1;
  int max_shapes = 3;
  int grid_size = 6;
  int min_radius = 5;
  int max_radius = 8;
  // Appearance, in 8-bit intensity levels.
  int background_min = 100;
  int background_max = 156;
  int noise_amplitude = 10;
  int tint_strength = 48;
  int train_count = 3000;
  int val_count = 200;
  int test_count = 100;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

nlohmann::json to_json(const DatasetSpec& spec);
/// Applies the keys of `j` on top of `base`; unknown keys are ConfigErrors.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j, DatasetSpec base = {});

struct CellLabel {
  int objectness = 0;  // 0 or 1
  int class_id = 0;    // 0 when empty
  friend bool operator==(const CellLabel&, const CellLabel&) = default;
};

struct SyntheticSample {
  std::string id;
  ImageTensor image;  // values are exact multiples of 1/255
  std::string caption;
  std::vector<int> seg_mask;          // H*W class ids
  std::vector<CellLabel> cell_labels;  // grid_size^2, row-major
  std::vector<int> classes;            // sorted class ids present
};

struct Dataset {
  DatasetSpec spec;
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> val;
  std::vector<SyntheticSample> test;
};

/// Pure function of the spec (including its seed); integer rasterization only.
Dataset generate_dataset(const DatasetSpec& spec);

/// Caption for a sorted set of class ids: "a red circle and a blue square".
std::string caption_for(const std::vector<int>& classes);

/// Whitespace tokenization over the closed caption vocabulary.
std::vector<std::string> tokenize(const std::string& caption);

/// Writes images/ and masks/ PNGs, <split>.jsonl annotations and spec.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace mtadv
