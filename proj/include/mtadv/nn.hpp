#pragma once

// Minimal layer kernels with explicit backward passes. Activations are
// stored as (n*h*w) x c row-major matrices, matching the HWC image layout.

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace mtadv::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Act {
  int n = 0, h = 0, w = 0;
  Mat<T> m;

  int c() const { return static_cast<int>(m.cols()); }
  Eigen::Index rows() const { return static_cast<Eigen::Index>(n) * h * w; }
};

inline int conv_out(int size, int stride) { return (size - 1) / stride + 1; }

/// 3x3, pad 1 patches; column index = (ky * 3 + kx) * c + ch.
template <typename T>
Mat<T> im2col3(const Act<T>& in, int stride) {
  const int oh = conv_out(in.h, stride), ow = conv_out(in.w, stride), c = in.c();
  Mat<T> cols = Mat<T>::Zero(static_cast<Eigen::Index>(in.n) * oh * ow, 9 * c);
  for (int b = 0; b < in.n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index r = (static_cast<Eigen::Index>(b) * oh + oy) * ow + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= in.h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= in.w) continue;
            const Eigen::Index src = (static_cast<Eigen::Index>(b) * in.h + iy) * in.w + ix;
            cols.row(r).segment((ky * 3 + kx) * c, c) = in.m.row(src);
          }
        }
      }
  return cols;
}

template <typename T>
Mat<T> col2im3(const Mat<T>& dcols, int n, int h, int w, int c, int stride) {
  const int oh = conv_out(h, stride), ow = conv_out(w, stride);
  Mat<T> dx = Mat<T>::Zero(static_cast<Eigen::Index>(n) * h * w, c);
  for (int b = 0; b < n; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index r = (static_cast<Eigen::Index>(b) * oh + oy) * ow + ox;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * stride + kx - 1;
            if (ix < 0 || ix >= w) continue;
            const Eigen::Index dst = (static_cast<Eigen::Index>(b) * h + iy) * w + ix;
            dx.row(dst) += dcols.row(r).segment((ky * 3 + kx) * c, c);
          }
        }
      }
  return dx;
}

/// Weight (k_in x k_out) and bias (1 x k_out); shared by 3x3 convs (k_in =
/// 9 * c_in on im2col patches) and per-position linear maps.
template <typename T>
struct Linear {
  Mat<T> w;
  Mat<T> b;

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x * w;
    y.rowwise() += b.row(0);
    return y;
  }
  /// Accumulates into `grad` when non-null; returns d/dx.
  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Linear* grad, bool need_dx) const {
    if (grad) {
      grad->w.noalias() += x.transpose() * dy;
      grad->b += dy.colwise().sum();
    }
    if (!need_dx) return {};
    return dy * w.transpose();
  }

  template <typename U>
  Linear<U> cast() const {
    return {w.template cast<U>(), b.template cast<U>()};
  }
  Linear zeros_like() const { return {Mat<T>::Zero(w.rows(), w.cols()), Mat<T>::Zero(1, b.cols())}; }
};

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
Mat<T> silu(const Mat<T>& x) {
  return x.unaryExpr([](T v) { return v * sigmoid(v); });
}

template <typename T>
Mat<T> silu_backward(const Mat<T>& x, const Mat<T>& dy) {
  return dy.binaryExpr(x, [](T g, T v) {
    const T s = sigmoid(v);
    return g * s * (T(1) + v * (T(1) - s));
  });
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Act<T> upsample2(const Act<T>& in) {
  Act<T> out{in.n, in.h * 2, in.w * 2, Mat<T>(in.rows() * 4, in.c())};
  for (int b = 0; b < in.n; ++b)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.m.row((static_cast<Eigen::Index>(b) * out.h + y) * out.w + x) =
            in.m.row((static_cast<Eigen::Index>(b) * in.h + y / 2) * in.w + x / 2);
  return out;
}

template <typename T>
Mat<T> upsample2_backward(const Mat<T>& dy, int n, int h, int w) {
  Mat<T> dx = Mat<T>::Zero(static_cast<Eigen::Index>(n) * h * w, dy.cols());
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        dx.row((static_cast<Eigen::Index>(b) * h + y / 2) * w + x / 2) +=
            dy.row((static_cast<Eigen::Index>(b) * 2 * h + y) * 2 * w + x);
  return dx;
}

/// 2x2 average pooling (h, w even).
template <typename T>
Act<T> avgpool2(const Act<T>& in) {
  Act<T> out{in.n, in.h / 2, in.w / 2, Mat<T>::Zero(in.rows() / 4, in.c())};
  for (int b = 0; b < in.n; ++b)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x)
        out.m.row((static_cast<Eigen::Index>(b) * out.h + y / 2) * out.w + x / 2) +=
            T(0.25) * in.m.row((static_cast<Eigen::Index>(b) * in.h + y) * in.w + x);
  return out;
}

template <typename T>
Mat<T> avgpool2_backward(const Mat<T>& dy, int n, int h, int w) {
  Mat<T> dx(static_cast<Eigen::Index>(n) * h * w, dy.cols());
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        dx.row((static_cast<Eigen::Index>(b) * h + y) * w + x) =
            T(0.25) * dy.row((static_cast<Eigen::Index>(b) * (h / 2) + y / 2) * (w / 2) + x / 2);
  return dx;
}

/// Mean over spatial positions: (n*h*w) x c -> n x c.
template <typename T>
Mat<T> global_mean(const Act<T>& in) {
  const Eigen::Index per = static_cast<Eigen::Index>(in.h) * in.w;
  Mat<T> out(in.n, in.c());
  for (int b = 0; b < in.n; ++b) out.row(b) = in.m.middleRows(b * per, per).colwise().mean();
  return out;
}

template <typename T>
Mat<T> global_mean_backward(const Mat<T>& dy, int n, int h, int w) {
  const Eigen::Index per = static_cast<Eigen::Index>(h) * w;
  Mat<T> dx(n * per, dy.cols());
  for (int b = 0; b < n; ++b) dx.middleRows(b * per, per).rowwise() = dy.row(b) / T(per);
  return dx;
}

template <typename T>
Mat<T> l2_normalize_rows(const Mat<T>& x) {
  Mat<T> y = x;
  for (Eigen::Index r = 0; r < y.rows(); ++r) y.row(r) /= x.row(r).norm();
  return y;
}

template <typename T>
Mat<T> l2_normalize_backward(const Mat<T>& x, const Mat<T>& y, const Mat<T>& dy) {
  Mat<T> dx(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T inv = T(1) / x.row(r).norm();
    dx.row(r) = (dy.row(r) - y.row(r) * y.row(r).dot(dy.row(r))) * inv;
  }
  return dx;
}

/// Row-wise log-softmax.
template <typename T>
Mat<T> log_softmax_rows(const Mat<T>& z) {
  Mat<T> out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const T mx = z.row(r).maxCoeff();
    const T lse = mx + std::log((z.row(r).array() - mx).exp().sum());
    out.row(r) = z.row(r).array() - lse;
  }
  return out;
}

}  // namespace mtadv::nn
