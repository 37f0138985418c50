#include "mtadv/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mtadv/io.hpp"
#include "mtadv/json_util.hpp"
#include "mtadv/png_io.hpp"
#include "mtadv/rng.hpp"

namespace mtadv {

std::string class_name(int id) {
  if (id == 0) return "background";
  if (id < 0 || id > kNumForeground) throw std::out_of_range("class id " + std::to_string(id));
  return std::string(kColorNames[class_color(id)]) + " " + kShapeNames[class_shape(id)];
}

namespace {

constexpr int kMargin = 2;

struct Extent {
  int hx, hy;
};

Extent extent_of(int shape, int r) {
  if (shape == 1) {
    const int s = r * 886 / 1000;  // square with roughly the circle's area
    return {s, s};
  }
  return {r, r};
}

bool inside(int shape, int r, int dx, int dy) {
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: {
      const int s = r * 886 / 1000;
      return std::abs(dx) <= s && std::abs(dy) <= s;
    }
    default:  // apex up, height 2r, base width 2r
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
  }
}

constexpr int kTint[kNumColors][3] = {{2, -1, -1}, {-1, 2, -1}, {-1, -1, 2}};

struct Placed {
  int cls, cx, cy, r;
  Extent ext;
};

SyntheticSample make_sample(const DatasetSpec& spec, const std::string& id, std::uint64_t seed) {
  Rng rng(seed);
  const int n = spec.image_size;
  const int count = rng.range(spec.min_shapes, spec.max_shapes);

  std::vector<int> pool(kNumForeground);
  for (int i = 0; i < kNumForeground; ++i) pool[i] = i + 1;
  std::vector<int> classes;
  for (int k = 0; k < count; ++k) {
    const auto j = static_cast<std::size_t>(rng.below(pool.size()));
    classes.push_back(pool[j]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(j));
  }

  std::vector<Placed> placed;
  for (;;) {
    placed.clear();
    bool ok = true;
    for (int cls : classes) {
      bool found = false;
      for (int attempt = 0; attempt < 200 && !found; ++attempt) {
        const int r = rng.range(spec.min_radius, spec.max_radius);
        const Extent e = extent_of(class_shape(cls), r);
        const int cx = rng.range(e.hx, n - 1 - e.hx);
        const int cy = rng.range(e.hy, n - 1 - e.hy);
        const int gcx = cx * spec.grid_size / n, gcy = cy * spec.grid_size / n;
        found = std::none_of(placed.begin(), placed.end(), [&](const Placed& p) {
          const bool overlap = std::abs(cx - p.cx) <= e.hx + p.ext.hx + kMargin &&
                               std::abs(cy - p.cy) <= e.hy + p.ext.hy + kMargin;
          const bool same_cell = gcx == p.cx * spec.grid_size / n && gcy == p.cy * spec.grid_size / n;
          return overlap || same_cell;
        });
        if (found) placed.push_back({cls, cx, cy, r, e});
      }
      if (!found) {
        ok = false;
        break;
      }
    }
    if (ok) break;
  }

  SyntheticSample s;
  s.id = id;
  s.seg_mask.assign(static_cast<std::size_t>(n) * n, 0);
  for (const Placed& p : placed) {
    for (int y = p.cy - p.ext.hy; y <= p.cy + p.ext.hy; ++y)
      for (int x = p.cx - p.ext.hx; x <= p.cx + p.ext.hx; ++x)
        if (inside(class_shape(p.cls), p.r, x - p.cx, y - p.cy)) s.seg_mask[y * n + x] = p.cls;
  }

  const int background = rng.range(spec.background_min, spec.background_max);
  const int half = spec.tint_strength / 2;
  std::vector<double> pixels(static_cast<std::size_t>(n) * n * 3);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int cls = s.seg_mask[y * n + x];
      for (int c = 0; c < 3; ++c) {
        int level = background + rng.range(-spec.noise_amplitude, spec.noise_amplitude);
        if (cls != 0) level += kTint[class_color(cls)][c] * half;
        level = std::clamp(level, 0, 255);
        pixels[(static_cast<std::size_t>(y) * n + x) * 3 + c] = level / 255.0;
      }
    }
  }
  s.image = ImageTensor(Shape{n, n, 3}, std::move(pixels));

  const int g = spec.grid_size;
  s.cell_labels.assign(static_cast<std::size_t>(g) * g, CellLabel{});
  for (const Placed& p : placed) {
    const int gx = p.cx * g / n, gy = p.cy * g / n;
    s.cell_labels[gy * g + gx] = CellLabel{1, p.cls};
  }

  s.classes = classes;
  std::sort(s.classes.begin(), s.classes.end());
  s.caption = caption_for(s.classes);
  return s;
}

std::vector<SyntheticSample> make_split(const DatasetSpec& spec, const std::string& split,
                                        int count) {
  std::vector<SyntheticSample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "%s-%05d", split.c_str(), i);
    out.push_back(make_sample(spec, id, derive_seed(spec.seed, std::string("dataset:") + id)));
  }
  return out;
}

}  // namespace

void DatasetSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("dataset." + field + ": " + why);
  };
  if (image_size < 16 || image_size > 255) fail("image_size", "must be in [16, 255]");
  if (min_shapes < 1) fail("min_shapes", "must be >= 1");
  if (max_shapes < min_shapes || max_shapes > 3) fail("max_shapes", "must be in [min_shapes, 3]");
  if (grid_size < 1 || image_size % grid_size != 0)
    fail("grid_size", "must divide image_size");
  if (min_radius < 3) fail("min_radius", "must be >= 3");
  if (max_radius < min_radius) fail("max_radius", "must be >= min_radius");
  const int box = 2 * max_radius + 1 + kMargin;
  if (box * box * max_shapes * 2 > image_size * image_size)
    fail("max_radius", "shapes do not fit in a " + std::to_string(image_size) + "px image");
  if (background_min < 0 || background_max > 255 || background_min > background_max)
    fail("background_min", "background range must lie in [0, 255]");
  if (noise_amplitude < 0 || noise_amplitude > 64) fail("noise_amplitude", "must be in [0, 64]");
  if (tint_strength < 2 || tint_strength > 200) fail("tint_strength", "must be in [2, 200]");
  if (train_count < 1) fail("train_count", "must be >= 1");
  if (val_count < 0) fail("val_count", "must be >= 0");
  if (test_count < 1) fail("test_count", "must be >= 1");
}

nlohmann::json to_json(const DatasetSpec& s) {
  return {{"image_size", s.image_size},       {"min_shapes", s.min_shapes},
          {"max_shapes", s.max_shapes},       {"grid_size", s.grid_size},
          {"min_radius", s.min_radius},       {"max_radius", s.max_radius},
          {"background_min", s.background_min}, {"background_max", s.background_max},
          {"noise_amplitude", s.noise_amplitude}, {"tint_strength", s.tint_strength},
          {"train_count", s.train_count},     {"val_count", s.val_count},
          {"test_count", s.test_count},       {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const nlohmann::json& j, DatasetSpec s) {
  JsonReader r(j, "dataset");
  r.get("image_size", s.image_size);
  r.get("min_shapes", s.min_shapes);
  r.get("max_shapes", s.max_shapes);
  r.get("grid_size", s.grid_size);
  r.get("min_radius", s.min_radius);
  r.get("max_radius", s.max_radius);
  r.get("background_min", s.background_min);
  r.get("background_max", s.background_max);
  r.get("noise_amplitude", s.noise_amplitude);
  r.get("tint_strength", s.tint_strength);
  r.get("train_count", s.train_count);
  r.get("val_count", s.val_count);
  r.get("test_count", s.test_count);
  r.get("seed", s.seed);
  r.finish();
  return s;
}

std::string caption_for(const std::vector<int>& classes) {
  std::string out;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (i > 0) out += " and ";
    out += "a " + class_name(classes[i]);
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& caption) {
  std::istringstream ss(caption);
  std::vector<std::string> tokens;
  for (std::string t; ss >> t;) tokens.push_back(t);
  return tokens;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.spec = spec;
  ds.train = make_split(spec, "train", spec.train_count);
  ds.val = make_split(spec, "val", spec.val_count);
  ds.test = make_split(spec, "test", spec.test_count);
  return ds;
}

namespace {

void save_split(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dir,
                const std::string& split) {
  std::ostringstream lines;
  for (const auto& s : samples) {
    Png8 img{s.image.width(), s.image.height(), 3, {}};
    img.pixels.reserve(s.image.size());
    for (double v : s.image) img.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    const std::string image_rel = "images/" + s.id + ".png";
    const std::string mask_rel = "masks/" + s.id + ".png";
    write_png(dir / image_rel, img);

    Png8 mask{s.image.width(), s.image.height(), 1, {}};
    for (int c : s.seg_mask) mask.pixels.push_back(static_cast<std::uint8_t>(c));
    write_png(dir / mask_rel, mask);

    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : s.cell_labels) cells.push_back({c.objectness, c.class_id});
    nlohmann::json row = {{"id", s.id},       {"caption", s.caption}, {"image", image_rel},
                          {"mask", mask_rel}, {"cell_labels", cells}, {"classes", s.classes}};
    lines << row.dump() << '\n';
  }
  write_file_atomic(dir / (split + ".jsonl"), lines.str());
}

std::vector<SyntheticSample> load_split(const std::filesystem::path& dir, const std::string& split) {
  std::istringstream lines(read_file(dir / (split + ".jsonl")));
  std::vector<SyntheticSample> out;
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    const auto row = nlohmann::json::parse(line);
    SyntheticSample s;
    s.id = row.at("id").get<std::string>();
    s.caption = row.at("caption").get<std::string>();
    s.classes = row.at("classes").get<std::vector<int>>();
    const Png8 img = read_png(dir / row.at("image").get<std::string>());
    std::vector<double> px(img.pixels.size());
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = img.pixels[i] / 255.0;
    s.image = ImageTensor(Shape{img.height, img.width, 3}, std::move(px));
    const Png8 mask = read_png(dir / row.at("mask").get<std::string>());
    s.seg_mask.assign(mask.pixels.begin(), mask.pixels.end());
    for (const auto& c : row.at("cell_labels"))
      s.cell_labels.push_back(CellLabel{c.at(0).get<int>(), c.at(1).get<int>()});
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  save_split(ds.train, dir, "train");
  save_split(ds.val, dir, "val");
  save_split(ds.test, dir, "test");
  write_file_atomic(dir / "spec.json", to_json(ds.spec).dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "spec.json"))
    throw std::runtime_error("no dataset at " + dir.string());
  Dataset ds;
  ds.spec = dataset_spec_from_json(nlohmann::json::parse(read_file(dir / "spec.json")));
  ds.train = load_split(dir, "train");
  ds.val = load_split(dir, "val");
  ds.test = load_split(dir, "test");
  return ds;
}

}  // namespace mtadv
