// Copyright 2026 The clickseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Dense kernels for the segmentation network. Activations are stored
// channel-major: element (c, image, y, x) lives at ((c * n + image) * h + y) * w + x,
// so a channel across the whole batch is one contiguous row.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace clickseg::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

template <typename T>
struct FeatureMap {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  FeatureMap() = default;
  FeatureMap(int channels, int images, int height, int width)
      : c(channels), n(images), h(height), w(width),
        data(static_cast<std::size_t>(channels) * images * height * width, T(0)) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  std::size_t row() const noexcept { return static_cast<std::size_t>(n) * plane(); }
  T* channel(int ch) noexcept { return data.data() + static_cast<std::size_t>(ch) * row(); }
  const T* channel(int ch) const noexcept { return data.data() + static_cast<std::size_t>(ch) * row(); }
  T* plane_ptr(int ch, int image) noexcept { return channel(ch) + static_cast<std::size_t>(image) * plane(); }
  const T* plane_ptr(int ch, int image) const noexcept {
    return channel(ch) + static_cast<std::size_t>(image) * plane();
  }
};

// Images per GEMM so that small spatial levels still produce wide products.
inline int images_per_chunk(std::size_t plane, int n) {
  constexpr std::size_t target = 4096;
  const auto k = static_cast<int>(std::max<std::size_t>(1, target / std::max<std::size_t>(plane, 1)));
  return std::clamp(k, 1, std::max(n, 1));
}

// 3x3 patches with zero padding for images [i0, i1): rows are (cin * 9),
// columns are (i1 - i0) * h * w.
template <typename T>
void im2col3x3(const FeatureMap<T>& x, int i0, int i1, std::vector<T>& col) {
  const int h = x.h, w = x.w;
  const std::size_t plane = x.plane();
  const std::size_t cols = static_cast<std::size_t>(i1 - i0) * plane;
  col.resize(static_cast<std::size_t>(x.c) * 9 * cols);
  for (int ch = 0; ch < x.c; ++ch) {
    for (int k = 0; k < 9; ++k) {
      const int dy = k / 3 - 1, dx = k % 3 - 1;
      T* row = col.data() + (static_cast<std::size_t>(ch) * 9 + k) * cols;
      for (int i = i0; i < i1; ++i) {
        const T* src = x.plane_ptr(ch, i);
        T* dst_plane = row + static_cast<std::size_t>(i - i0) * plane;
        for (int y = 0; y < h; ++y) {
          T* dst = dst_plane + static_cast<std::size_t>(y) * w;
          const int sy = y + dy;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* s = src + static_cast<std::size_t>(sy) * w;
          if (dx == 0) {
            std::copy(s, s + w, dst);
          } else if (dx < 0) {
            dst[0] = T(0);
            std::copy(s, s + w - 1, dst + 1);
          } else {
            std::copy(s + 1, s + w, dst);
            dst[w - 1] = T(0);
          }
        }
      }
    }
  }
}

// y = conv3x3(x, weights), weights laid out [cout][cin][3][3], no bias.
template <typename T>
FeatureMap<T> conv3x3_forward(const FeatureMap<T>& x, std::span<const T> weights, int cout) {
  FeatureMap<T> y(cout, x.n, x.h, x.w);
  const int k = x.c * 9;
  const int chunk = images_per_chunk(x.plane(), x.n);
  std::vector<T> col;
  ConstMatrixMap<T> wm(weights.data(), cout, k, Eigen::OuterStride<>(k));
  for (int i0 = 0; i0 < x.n; i0 += chunk) {
    const int i1 = std::min(x.n, i0 + chunk);
    const auto cols = static_cast<Eigen::Index>(static_cast<std::size_t>(i1 - i0) * x.plane());
    im2col3x3(x, i0, i1, col);
    ConstMatrixMap<T> cm(col.data(), k, cols, Eigen::OuterStride<>(cols));
    MatrixMap<T> ym(y.plane_ptr(0, i0), cout, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(y.row())));
    ym.noalias() = wm * cm;
  }
  return y;
}

// Accumulates dW and, when dx is non-null, writes the input gradient. The
// input gradient is a convolution of dy with the spatially flipped,
// channel-transposed kernel, which keeps the GEMM output small.
template <typename T>
void conv3x3_backward(const FeatureMap<T>& x, std::span<const T> weights, const FeatureMap<T>& dy,
                      std::span<T> dweights, FeatureMap<T>* dx) {
  const int cout = dy.c;
  const int k = x.c * 9;
  const int chunk = images_per_chunk(x.plane(), x.n);
  std::vector<T> col;
  MatrixMap<T> dwm(dweights.data(), cout, k, Eigen::OuterStride<>(k));
  for (int i0 = 0; i0 < x.n; i0 += chunk) {
    const int i1 = std::min(x.n, i0 + chunk);
    const auto cols = static_cast<Eigen::Index>(static_cast<std::size_t>(i1 - i0) * x.plane());
    im2col3x3(x, i0, i1, col);
    ConstMatrixMap<T> cm(col.data(), k, cols, Eigen::OuterStride<>(cols));
    ConstMatrixMap<T> dym(dy.plane_ptr(0, i0), cout, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(dy.row())));
    dwm.noalias() += dym * cm.transpose();
  }
  if (!dx) return;
  std::vector<T> flipped(weights.size());
  for (int co = 0; co < cout; ++co) {
    for (int ci = 0; ci < x.c; ++ci) {
      for (int t = 0; t < 9; ++t) {
        flipped[(static_cast<std::size_t>(ci) * cout + co) * 9 + t] =
            weights[(static_cast<std::size_t>(co) * x.c + ci) * 9 + (8 - t)];
      }
    }
  }
  *dx = conv3x3_forward(dy, std::span<const T>(flipped), x.c);
}

// Per-channel batch statistics of one normalization layer.
template <typename T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased
  std::vector<T> inv_std;
};

// Batch normalization with batch statistics followed by ReLU, in place.
template <typename T>
void batchnorm_relu_train(FeatureMap<T>& x, std::span<const T> gamma, std::span<const T> beta, double eps,
                          NormStats<T>& stats) {
  const std::size_t m = x.row();
  stats.mean.assign(static_cast<std::size_t>(x.c), T(0));
  stats.var.assign(static_cast<std::size_t>(x.c), T(0));
  stats.inv_std.assign(static_cast<std::size_t>(x.c), T(0));
  for (int ch = 0; ch < x.c; ++ch) {
    T* v = x.channel(ch);
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum += double(v[i]);
    const double mean = sum / double(m);
    double sq = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = double(v[i]) - mean;
      sq += d * d;
    }
    const double var = sq / double(m);
    const double istd = 1.0 / std::sqrt(var + eps);
    stats.mean[ch] = T(mean);
    stats.var[ch] = T(var);
    stats.inv_std[ch] = T(istd);
    const T scale = T(double(gamma[ch]) * istd);
    const T shift = T(double(beta[ch]) - mean * double(gamma[ch]) * istd);
    for (std::size_t i = 0; i < m; ++i) v[i] = std::max(T(0), v[i] * scale + shift);
  }
}

template <typename T>
void batchnorm_relu_infer(FeatureMap<T>& x, std::span<const T> gamma, std::span<const T> beta,
                          std::span<const T> running_mean, std::span<const T> running_var, double eps) {
  const std::size_t m = x.row();
  for (int ch = 0; ch < x.c; ++ch) {
    const double istd = 1.0 / std::sqrt(double(running_var[ch]) + eps);
    const T scale = T(double(gamma[ch]) * istd);
    const T shift = T(double(beta[ch]) - double(running_mean[ch]) * double(gamma[ch]) * istd);
    T* v = x.channel(ch);
    for (std::size_t i = 0; i < m; ++i) v[i] = std::max(T(0), v[i] * scale + shift);
  }
}

// Gradient through ReLU(BN(pre)). `out` is the forward output (ReLU mask).
// Overwrites dout with d(pre) and accumulates dgamma/dbeta.
template <typename T>
void batchnorm_relu_backward(const FeatureMap<T>& pre, const FeatureMap<T>& out, const NormStats<T>& stats,
                             std::span<const T> gamma, FeatureMap<T>& dout, std::span<T> dgamma,
                             std::span<T> dbeta) {
  const std::size_t m = pre.row();
  for (int ch = 0; ch < pre.c; ++ch) {
    const T* p = pre.channel(ch);
    const T* o = out.channel(ch);
    T* g = dout.channel(ch);
    const double mean = double(stats.mean[ch]);
    const double istd = double(stats.inv_std[ch]);
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!(o[i] > T(0))) g[i] = T(0);
      const double xhat = (double(p[i]) - mean) * istd;
      sum_dy += double(g[i]);
      sum_dy_xhat += double(g[i]) * xhat;
    }
    dgamma[ch] += T(sum_dy_xhat);
    dbeta[ch] += T(sum_dy);
    const double k = double(gamma[ch]) * istd / double(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double xhat = (double(p[i]) - mean) * istd;
      g[i] = T(k * (double(m) * double(g[i]) - sum_dy - xhat * sum_dy_xhat));
    }
  }
}

// 2x2 max pooling, stride 2. `argmax` receives the winning offset (0..3)
// of each output element.
template <typename T>
FeatureMap<T> maxpool2x2_forward(const FeatureMap<T>& x, std::vector<unsigned char>* argmax) {
  FeatureMap<T> y(x.c, x.n, x.h / 2, x.w / 2);
  if (argmax) argmax->resize(y.data.size());
  std::size_t o = 0;
  for (int ch = 0; ch < x.c; ++ch) {
    for (int i = 0; i < x.n; ++i) {
      const T* src = x.plane_ptr(ch, i);
      for (int yy = 0; yy < y.h; ++yy) {
        const T* r0 = src + static_cast<std::size_t>(2 * yy) * x.w;
        const T* r1 = r0 + x.w;
        for (int xx = 0; xx < y.w; ++xx, ++o) {
          T best = r0[2 * xx];
          unsigned char arg = 0;
          if (r0[2 * xx + 1] > best) best = r0[2 * xx + 1], arg = 1;
          if (r1[2 * xx] > best) best = r1[2 * xx], arg = 2;
          if (r1[2 * xx + 1] > best) best = r1[2 * xx + 1], arg = 3;
          y.data[o] = best;
          if (argmax) (*argmax)[o] = arg;
        }
      }
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> maxpool2x2_backward(const FeatureMap<T>& dy, const std::vector<unsigned char>& argmax, int h,
                                  int w) {
  FeatureMap<T> dx(dy.c, dy.n, h, w);
  std::size_t o = 0;
  for (int ch = 0; ch < dy.c; ++ch) {
    for (int i = 0; i < dy.n; ++i) {
      T* dst = dx.plane_ptr(ch, i);
      for (int yy = 0; yy < dy.h; ++yy) {
        for (int xx = 0; xx < dy.w; ++xx, ++o) {
          const int a = argmax[o];
          dst[static_cast<std::size_t>(2 * yy + a / 2) * w + 2 * xx + a % 2] += dy.data[o];
        }
      }
    }
  }
  return dx;
}

// 2x2 transposed convolution, stride 2. Weights [cin][cout][2][2], bias [cout].
template <typename T>
FeatureMap<T> upconv2x2_forward(const FeatureMap<T>& x, std::span<const T> weights, std::span<const T> bias,
                                int cout) {
  const auto cols = static_cast<Eigen::Index>(x.row());
  RowMatrix<T> y4(cout * 4, cols);
  ConstMatrixMap<T> wm(weights.data(), x.c, cout * 4, Eigen::OuterStride<>(cout * 4));
  ConstMatrixMap<T> xm(x.data.data(), x.c, cols, Eigen::OuterStride<>(cols));
  y4.noalias() = wm.transpose() * xm;
  FeatureMap<T> y(cout, x.n, x.h * 2, x.w * 2);
  for (int co = 0; co < cout; ++co) {
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2, kx = k % 2;
      const T* src = y4.data() + static_cast<std::size_t>(co * 4 + k) * cols;
      for (int i = 0; i < x.n; ++i) {
        T* dst = y.plane_ptr(co, i);
        const T* s = src + static_cast<std::size_t>(i) * x.plane();
        for (int yy = 0; yy < x.h; ++yy) {
          T* drow = dst + static_cast<std::size_t>(2 * yy + ky) * y.w + kx;
          const T* srow = s + static_cast<std::size_t>(yy) * x.w;
          for (int xx = 0; xx < x.w; ++xx) drow[2 * xx] = srow[xx] + bias[co];
        }
      }
    }
  }
  return y;
}

template <typename T>
FeatureMap<T> upconv2x2_backward(const FeatureMap<T>& x, std::span<const T> weights, const FeatureMap<T>& dy,
                                 std::span<T> dweights, std::span<T> dbias) {
  const int cout = dy.c;
  const auto cols = static_cast<Eigen::Index>(x.row());
  RowMatrix<T> dy4(cout * 4, cols);
  for (int co = 0; co < cout; ++co) {
    double db = 0.0;
    for (int k = 0; k < 4; ++k) {
      const int ky = k / 2, kx = k % 2;
      T* dst = dy4.data() + static_cast<std::size_t>(co * 4 + k) * cols;
      for (int i = 0; i < x.n; ++i) {
        const T* src = dy.plane_ptr(co, i);
        T* d = dst + static_cast<std::size_t>(i) * x.plane();
        for (int yy = 0; yy < x.h; ++yy) {
          const T* srow = src + static_cast<std::size_t>(2 * yy + ky) * dy.w + kx;
          T* drow = d + static_cast<std::size_t>(yy) * x.w;
          for (int xx = 0; xx < x.w; ++xx) {
            drow[xx] = srow[2 * xx];
            db += double(srow[2 * xx]);
          }
        }
      }
    }
    dbias[co] += T(db);
  }
  ConstMatrixMap<T> wm(weights.data(), x.c, cout * 4, Eigen::OuterStride<>(cout * 4));
  MatrixMap<T> dwm(dweights.data(), x.c, cout * 4, Eigen::OuterStride<>(cout * 4));
  ConstMatrixMap<T> xm(x.data.data(), x.c, cols, Eigen::OuterStride<>(cols));
  dwm.noalias() += xm * dy4.transpose();
  FeatureMap<T> dx(x.c, x.n, x.h, x.w);
  MatrixMap<T> dxm(dx.data.data(), x.c, cols, Eigen::OuterStride<>(cols));
  dxm.noalias() = wm * dy4;
  return dx;
}

// Channel concatenation [a; b].
template <typename T>
FeatureMap<T> concat_channels(const FeatureMap<T>& a, const FeatureMap<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw std::logic_error("concat_channels: shape mismatch");
  FeatureMap<T> y;
  y.c = a.c + b.c;
  y.n = a.n;
  y.h = a.h;
  y.w = a.w;
  y.data.reserve(a.data.size() + b.data.size());
  y.data.insert(y.data.end(), a.data.begin(), a.data.end());
  y.data.insert(y.data.end(), b.data.begin(), b.data.end());
  return y;
}

template <typename T>
void split_channels(const FeatureMap<T>& y, int first_channels, FeatureMap<T>& a, FeatureMap<T>& b) {
  a = FeatureMap<T>(first_channels, y.n, y.h, y.w);
  b = FeatureMap<T>(y.c - first_channels, y.n, y.h, y.w);
  std::copy_n(y.data.begin(), a.data.size(), a.data.begin());
  std::copy(y.data.begin() + static_cast<std::ptrdiff_t>(a.data.size()), y.data.end(), b.data.begin());
}

// 1x1 convolution to a single output channel followed by a sigmoid.
template <typename T>
FeatureMap<T> head_forward(const FeatureMap<T>& x, std::span<const T> weights, T bias) {
  FeatureMap<T> y(1, x.n, x.h, x.w);
  const auto cols = static_cast<Eigen::Index>(x.row());
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> wm(weights.data(), x.c);
  ConstMatrixMap<T> xm(x.data.data(), x.c, cols, Eigen::OuterStride<>(cols));
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> ym(y.data.data(), cols);
  ym.noalias() = wm * xm;
  // Clamped so probabilities stay strictly inside (0, 1) in finite precision.
  const T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  for (auto& v : y.data) v = std::clamp(T(1) / (T(1) + std::exp(-(v + bias))), lo, hi);
  return y;
}

// Backward through sigmoid + 1x1 head given d(probability).
template <typename T>
FeatureMap<T> head_backward(const FeatureMap<T>& x, std::span<const T> weights, const FeatureMap<T>& probs,
                            const FeatureMap<T>& dprobs, std::span<T> dweights, T& dbias) {
  const auto cols = static_cast<Eigen::Index>(x.row());
  Eigen::Matrix<T, 1, Eigen::Dynamic> dlogit(cols);
  double db = 0.0;
  for (Eigen::Index i = 0; i < cols; ++i) {
    const T p = probs.data[static_cast<std::size_t>(i)];
    dlogit[i] = dprobs.data[static_cast<std::size_t>(i)] * p * (T(1) - p);
    db += double(dlogit[i]);
  }
  dbias += T(db);
  ConstMatrixMap<T> xm(x.data.data(), x.c, cols, Eigen::OuterStride<>(cols));
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dwm(dweights.data(), x.c);
  dwm.noalias() += xm * dlogit.transpose();
  FeatureMap<T> dx(x.c, x.n, x.h, x.w);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> wv(weights.data(), x.c);
  MatrixMap<T> dxm(dx.data.data(), x.c, cols, Eigen::OuterStride<>(cols));
  dxm.noalias() = wv * dlogit;
  return dx;
}

}  // namespace clickseg::nn
