#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtadv {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width) *
           static_cast<std::size_t>(channels);
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" + std::to_string(s.channels);
}

/// Dense H x W x C array, channel-interleaved (index = (y * W + x) * C + c).
///
/// Used both for pixel images and for same-shaped quantities living in pixel
/// units (gradients, perturbations). Range is not enforced here; `is_feasible`
/// reports whether every value is a valid pixel intensity.
template <typename T>
class BasicImage {
 public:
  using value_type = T;

  BasicImage() = default;
  explicit BasicImage(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.height <= 0 || shape.width <= 0 || shape.channels <= 0)
      throw std::invalid_argument("image shape must be positive, got " + to_string(shape));
  }
  BasicImage(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw std::invalid_argument("image data size " + std::to_string(data_.size()) +
                                  " does not match shape " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(int y, int x, int c) { return data_[index(y, x, c)]; }
  const T& at(int y, int x, int c) const { return data_[index(y, x, c)]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool is_feasible() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return v >= T(0) && v <= T(1); });
  }

  template <typename U>
  BasicImage<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicImage<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicImage&, const BasicImage&) = default;

 private:
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * shape_.width + x) * shape_.channels + c;
  }

  Shape shape_;
  std::vector<T> data_;
};

using ImageTensor = BasicImage<double>;

template <typename T>
void require_same_shape(const BasicImage<T>& a, const BasicImage<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
}

/// Clips every element into [0, 1]. Idempotent.
template <typename T>
BasicImage<T> clamp_valid(BasicImage<T> image) {
  for (auto& v : image) v = std::clamp(v, T(0), T(1));
  return image;
}

template <typename T>
T linf_norm(const BasicImage<T>& a) {
  T m = T(0);
  for (T v : a) m = std::max(m, v < T(0) ? -v : v);
  return m;
}

template <typename T>
T linf_distance(const BasicImage<T>& a, const BasicImage<T>& b) {
  require_same_shape(a, b, "linf_distance");
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    T d = a[i] - b[i];
    m = std::max(m, d < T(0) ? -d : d);
  }
  return m;
}

}  // namespace mtadv
