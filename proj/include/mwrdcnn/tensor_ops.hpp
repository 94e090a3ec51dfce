#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwrdcnn/tensor.hpp"

namespace mwrdcnn {

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapRM = Eigen::Map<const RowMat<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

// Reused per-thread column buffers. Chunking below caps their size.
template <typename T>
inline std::vector<T>& scratch_a() {
  thread_local std::vector<T> buf;
  return buf;
}
template <typename T>
inline std::vector<T>& scratch_b() {
  thread_local std::vector<T> buf;
  return buf;
}

inline int conv_out_dim(int in, int k, int stride, int pad, char axis) {
  const int span = in + 2 * pad - k;
  if (span < 0 || span % stride != 0) {
    throw std::invalid_argument(std::string("conv2d geometry: (") + axis + "=" +
                                std::to_string(in) + " + 2*" + std::to_string(pad) + " - " +
                                std::to_string(k) + ") must be non-negative and divisible by stride " +
                                std::to_string(stride));
  }
  return span / stride + 1;
}

// Columns for output positions [p0, p1), p = oy*ow + ox.
// col is (c*kh*kw) x (p1-p0), row-major.
template <typename T>
void im2col_range(const T* x, int c, int h, int w, int kh, int kw, int stride, int pad,
                  int ow, int p0, int p1, T* col) {
  const int cols = p1 - p0;
  for (int ci = 0; ci < c; ++ci) {
    const T* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        T* row = col + (static_cast<std::size_t>(ci) * kh * kw + u * kw + v) * cols;
        for (int p = p0; p < p1; ++p) {
          const int oy = p / ow;
          const int ox = p - oy * ow;
          const int iy = oy * stride + u - pad;
          const int ix = ox * stride + v - pad;
          row[p - p0] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? xc[iy * w + ix] : T(0);
        }
      }
    }
  }
}

// Adjoint of im2col_range: scatter-adds columns back into the image.
template <typename T>
void col2im_add_range(const T* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                      int ow, int p0, int p1, T* x) {
  const int cols = p1 - p0;
  for (int ci = 0; ci < c; ++ci) {
    T* xc = x + static_cast<std::size_t>(ci) * h * w;
    for (int u = 0; u < kh; ++u) {
      for (int v = 0; v < kw; ++v) {
        const T* row = col + (static_cast<std::size_t>(ci) * kh * kw + u * kw + v) * cols;
        for (int p = p0; p < p1; ++p) {
          const int oy = p / ow;
          const int ox = p - oy * ow;
          const int iy = oy * stride + u - pad;
          const int ix = ox * stride + v - pad;
          if (iy >= 0 && iy < h && ix >= 0 && ix < w) xc[iy * w + ix] += row[p - p0];
        }
      }
    }
  }
}

// Cap the column buffer around 16 MB of T.
inline int col_chunk(std::size_t k_rows, std::size_t positions) {
  const std::size_t cap = std::max<std::size_t>(std::size_t(1) << 22, k_rows) / k_rows;
  return static_cast<int>(std::min(positions, std::max<std::size_t>(cap, 1)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip) and its adjoint.

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const FilterView<T>& f, int stride, int pad) {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
  if (x.shape.c != f.c_in) {
    throw std::invalid_argument("conv2d channel mismatch: input " + x.shape.str() +
                                " vs filter(c_out=" + std::to_string(f.c_out) +
                                ",c_in=" + std::to_string(f.c_in) + "," + std::to_string(f.kh) +
                                "x" + std::to_string(f.kw) + ")");
  }
  const int oh = detail::conv_out_dim(x.shape.h, f.kh, stride, pad, 'h');
  const int ow = detail::conv_out_dim(x.shape.w, f.kw, stride, pad, 'w');

  Tensor<T> y(x.shape.n, f.c_out, oh, ow);
  const std::size_t K = static_cast<std::size_t>(f.c_in) * f.kh * f.kw;
  const std::size_t P = static_cast<std::size_t>(oh) * ow;
  const int chunk = detail::col_chunk(K, P);

  auto& col = detail::scratch_a<T>();
  col.resize(K * chunk);
  detail::CMapRM<T> wmat(f.weights, f.c_out, static_cast<Eigen::Index>(K));

  for (int in = 0; in < x.shape.n; ++in) {
    T* yn = y.plane(in, 0);
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const int p1 = static_cast<int>(std::min(P, p0 + chunk));
      const int cols = p1 - static_cast<int>(p0);
      detail::im2col_range(x.plane(in, 0), x.shape.c, x.shape.h, x.shape.w, f.kh, f.kw, stride,
                           pad, ow, static_cast<int>(p0), p1, col.data());
      detail::StridedMap<T> out(yn + p0, f.c_out, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      out.noalias() = wmat * detail::CMapRM<T>(col.data(), static_cast<Eigen::Index>(K), cols);
    }
    if (f.bias != nullptr) {
      for (int co = 0; co < f.c_out; ++co) {
        T* row = yn + co * P;
        const T b = f.bias[co];
        for (std::size_t p = 0; p < P; ++p) row[p] += b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvFilter<T>& f, int stride, int pad) {
  return conv2d(x, view_of(f), stride, pad);
}

// Accumulating backward pass. Any of the output slots may be null; non-null
// slots must be preallocated (grad_x_acc zero-filled by the caller when a
// fresh gradient is wanted).
template <typename T>
void conv2d_backward_acc(const Tensor<T>& x, const FilterView<T>& f, int stride, int pad,
                         const Tensor<T>& grad_out, Tensor<T>* grad_x_acc, T* grad_w_acc,
                         T* grad_b_acc) {
  const int oh = detail::conv_out_dim(x.shape.h, f.kh, stride, pad, 'h');
  const int ow = detail::conv_out_dim(x.shape.w, f.kw, stride, pad, 'w');
  const Shape want{x.shape.n, f.c_out, oh, ow};
  if (!(grad_out.shape == want)) {
    throw std::invalid_argument("conv2d_backward: grad_out shape " + grad_out.shape.str() +
                                " does not match conv output " + want.str());
  }
  if (grad_x_acc != nullptr && !(grad_x_acc->shape == x.shape)) {
    throw std::invalid_argument("conv2d_backward: grad_x shape " + grad_x_acc->shape.str() +
                                " does not match input " + x.shape.str());
  }

  const std::size_t K = static_cast<std::size_t>(f.c_in) * f.kh * f.kw;
  const std::size_t P = static_cast<std::size_t>(oh) * ow;
  const int chunk = detail::col_chunk(K, P);

  auto& col = detail::scratch_a<T>();
  auto& colg = detail::scratch_b<T>();
  col.resize(K * chunk);
  if (grad_x_acc != nullptr) colg.resize(K * chunk);
  detail::CMapRM<T> wmat(f.weights, f.c_out, static_cast<Eigen::Index>(K));

  for (int in = 0; in < x.shape.n; ++in) {
    const T* gn = grad_out.plane(in, 0);
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const int p1 = static_cast<int>(std::min(P, p0 + chunk));
      const int cols = p1 - static_cast<int>(p0);
      detail::CStridedMap<T> gmap(gn + p0, f.c_out, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      if (grad_w_acc != nullptr) {
        detail::im2col_range(x.plane(in, 0), x.shape.c, x.shape.h, x.shape.w, f.kh, f.kw, stride,
                             pad, ow, static_cast<int>(p0), p1, col.data());
        detail::MapRM<T> gw(grad_w_acc, f.c_out, static_cast<Eigen::Index>(K));
        gw.noalias() += gmap * detail::CMapRM<T>(col.data(), static_cast<Eigen::Index>(K), cols).transpose();
      }
      if (grad_x_acc != nullptr) {
        detail::MapRM<T> gc(colg.data(), static_cast<Eigen::Index>(K), cols);
        gc.noalias() = wmat.transpose() * gmap;
        detail::col2im_add_range(colg.data(), x.shape.c, x.shape.h, x.shape.w, f.kh, f.kw, stride,
                                 pad, ow, static_cast<int>(p0), p1, grad_x_acc->plane(in, 0));
      }
    }
    if (grad_b_acc != nullptr) {
      for (int co = 0; co < f.c_out; ++co) {
        const T* row = gn + co * P;
        T s = 0;
        for (std::size_t p = 0; p < P; ++p) s += row[p];
        grad_b_acc[co] += s;
      }
    }
  }
}

template <typename T>
struct ConvGrads {
  Tensor<T> x;
  std::vector<T> weights;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& x, const ConvFilter<T>& f, int stride, int pad,
                             const Tensor<T>& grad_out) {
  ConvGrads<T> g;
  g.x = Tensor<T>(x.shape);
  g.weights.assign(f.weights.size(), T(0));
  g.bias.assign(f.bias.size(), T(0));
  conv2d_backward_acc(x, view_of(f), stride, pad, grad_out, &g.x, g.weights.data(), g.bias.data());
  return g;
}

// Inverse convolution: each input channel scatters through its filter onto a
// stride-spaced grid; output is summed over input channels. This is exactly
// the linear adjoint of conv2d with the same filter and pad 0 (bias plays no
// part in it).
template <typename T>
Tensor<T> iconv2d(const Tensor<T>& o, const FilterView<T>& f, int stride) {
  if (stride < 1) throw std::invalid_argument("iconv2d: stride must be >= 1");
  if (o.shape.c != f.c_out) {
    throw std::invalid_argument("iconv2d channel mismatch: input " + o.shape.str() +
                                " has c=" + std::to_string(o.shape.c) + " but filter c_out=" +
                                std::to_string(f.c_out));
  }
  const int H = (o.shape.h - 1) * stride + f.kh;
  const int W = (o.shape.w - 1) * stride + f.kw;
  Tensor<T> y(o.shape.n, f.c_in, H, W);

  const std::size_t K = static_cast<std::size_t>(f.c_in) * f.kh * f.kw;
  const std::size_t P = static_cast<std::size_t>(o.shape.h) * o.shape.w;
  const int chunk = detail::col_chunk(K, P);
  auto& colg = detail::scratch_b<T>();
  colg.resize(K * chunk);
  detail::CMapRM<T> wmat(f.weights, f.c_out, static_cast<Eigen::Index>(K));

  for (int in = 0; in < o.shape.n; ++in) {
    const T* on = o.plane(in, 0);
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const int p1 = static_cast<int>(std::min(P, p0 + chunk));
      const int cols = p1 - static_cast<int>(p0);
      detail::CStridedMap<T> omap(on + p0, f.c_out, cols, Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
      detail::MapRM<T> gc(colg.data(), static_cast<Eigen::Index>(K), cols);
      gc.noalias() = wmat.transpose() * omap;
      detail::col2im_add_range(colg.data(), f.c_in, H, W, f.kh, f.kw, stride, 0, o.shape.w,
                               static_cast<int>(p0), p1, y.plane(in, 0));
    }
  }
  return y;
}

template <typename T>
Tensor<T> iconv2d(const Tensor<T>& o, const ConvFilter<T>& f, int stride) {
  return iconv2d(o, view_of(f), stride);
}

template <typename T>
void iconv2d_backward_acc(const Tensor<T>& o, const FilterView<T>& f, int stride,
                          const Tensor<T>& grad_out, Tensor<T>* grad_o_acc, T* grad_w_acc) {
  const Shape want{o.shape.n, f.c_in, (o.shape.h - 1) * stride + f.kh,
                   (o.shape.w - 1) * stride + f.kw};
  if (!(grad_out.shape == want)) {
    throw std::invalid_argument("iconv2d_backward: grad_out shape " + grad_out.shape.str() +
                                " does not match iconv2d output " + want.str());
  }
  // Adjoint of the adjoint: grad wrt o is a plain forward convolution of
  // grad_out; the weight gradient is the usual correlation with roles swapped.
  const std::size_t K = static_cast<std::size_t>(f.c_in) * f.kh * f.kw;
  const std::size_t P = static_cast<std::size_t>(o.shape.h) * o.shape.w;
  const int chunk = detail::col_chunk(K, P);
  auto& col = detail::scratch_a<T>();
  col.resize(K * chunk);
  detail::CMapRM<T> wmat(f.weights, f.c_out, static_cast<Eigen::Index>(K));

  for (int in = 0; in < o.shape.n; ++in) {
    for (std::size_t p0 = 0; p0 < P; p0 += chunk) {
      const int p1 = static_cast<int>(std::min(P, p0 + chunk));
      const int cols = p1 - static_cast<int>(p0);
      detail::im2col_range(grad_out.plane(in, 0), f.c_in, want.h, want.w, f.kh, f.kw, stride, 0,
                           o.shape.w, static_cast<int>(p0), p1, col.data());
      detail::CMapRM<T> cmap(col.data(), static_cast<Eigen::Index>(K), cols);
      if (grad_o_acc != nullptr) {
        detail::StridedMap<T> go(grad_o_acc->plane(in, 0) + p0, f.c_out, cols,
                                 Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
        go.noalias() += wmat * cmap;
      }
      if (grad_w_acc != nullptr) {
        detail::CStridedMap<T> omap(o.plane(in, 0) + p0, f.c_out, cols,
                                    Eigen::OuterStride<>(static_cast<Eigen::Index>(P)));
        detail::MapRM<T> gw(grad_w_acc, f.c_out, static_cast<Eigen::Index>(K));
        gw.noalias() += omap * cmap.transpose();
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Pointwise ops.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

// Subgradient at 0 is 0: ties pass no gradient.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  if (!(x.shape == grad_out.shape)) {
    throw std::invalid_argument("relu_backward shape mismatch: " + x.shape.str() + " vs " +
                                grad_out.shape.str());
  }
  Tensor<T> g(x.shape);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    g.data[i] = x.data[i] > T(0) ? grad_out.data[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape == b.shape)) {
    throw std::invalid_argument("add shape mismatch: " + a.shape.str() + " vs " + b.shape.str());
  }
  Tensor<T> y(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
  return y;
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  if (!(dst.shape == src.shape)) {
    throw std::invalid_argument("add_into shape mismatch: " + dst.shape.str() + " vs " +
                                src.shape.str());
  }
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

// ---------------------------------------------------------------------------
// Channel bookkeeping.

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const Shape& s0 = xs[0]->shape;
  int c_total = 0;
  for (const Tensor<T>* t : xs) {
    if (t->shape.n != s0.n || t->shape.h != s0.h || t->shape.w != s0.w) {
      throw std::invalid_argument("concat_channels spatial mismatch: " + t->shape.str() + " vs " +
                                  s0.str());
    }
    c_total += t->shape.c;
  }
  Tensor<T> y(s0.n, c_total, s0.h, s0.w);
  const std::size_t plane = static_cast<std::size_t>(s0.h) * s0.w;
  for (int in = 0; in < s0.n; ++in) {
    int co = 0;
    for (const Tensor<T>* t : xs) {
      std::copy_n(t->plane(in, 0), plane * t->shape.c, y.plane(in, co));
      co += t->shape.c;
    }
  }
  return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  return concat_channels<T>({&a, &b});
}

// Channels [c0, c1) as a fresh tensor; the backward of concat is slicing.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int c0, int c1) {
  if (c0 < 0 || c1 > x.shape.c || c0 >= c1) {
    throw std::invalid_argument("slice_channels: bad range [" + std::to_string(c0) + "," +
                                std::to_string(c1) + ") for c=" + std::to_string(x.shape.c));
  }
  Tensor<T> y(x.shape.n, c1 - c0, x.shape.h, x.shape.w);
  const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
  for (int in = 0; in < x.shape.n; ++in) {
    std::copy_n(x.plane(in, c0), plane * (c1 - c0), y.plane(in, 0));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Batch normalization over (n, h, w) per channel.

template <typename T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;  // per channel, 1/sqrt(batch var + eps)
};

// Train mode normalizes with batch statistics and folds them into the running
// averages; infer mode uses the running averages and requires at least one
// prior training batch (*count > 0). `cache` is only written in train mode.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const T* gamma, const T* beta, T* run_mean, T* run_var,
                     T* count, Mode mode, T eps, T momentum, BnCache<T>* cache) {
  const int C = x.shape.c;
  const std::size_t plane = static_cast<std::size_t>(x.shape.h) * x.shape.w;
  const std::size_t m = static_cast<std::size_t>(x.shape.n) * plane;  // samples per channel
  Tensor<T> y(x.shape);

  if (mode == Mode::kInfer) {
    if (count == nullptr || *count <= T(0)) {
      throw std::runtime_error("batch_norm: inference requested before any running statistics exist");
    }
    for (int ci = 0; ci < C; ++ci) {
      const T inv = T(1) / std::sqrt(run_var[ci] + eps);
      const T g = gamma[ci], b = beta[ci], mu = run_mean[ci];
      for (int in = 0; in < x.shape.n; ++in) {
        const T* xp = x.plane(in, ci);
        T* yp = y.plane(in, ci);
        for (std::size_t i = 0; i < plane; ++i) yp[i] = g * (xp[i] - mu) * inv + b;
      }
    }
    return y;
  }

  if (cache != nullptr) {
    cache->xhat = Tensor<T>(x.shape);
    cache->inv_std.assign(C, T(0));
  }
  for (int ci = 0; ci < C; ++ci) {
    double sum = 0, sumsq = 0;
    for (int in = 0; in < x.shape.n; ++in) {
      const T* xp = x.plane(in, ci);
      for (std::size_t i = 0; i < plane; ++i) {
        sum += xp[i];
        sumsq += static_cast<double>(xp[i]) * xp[i];
      }
    }
    const T mu = static_cast<T>(sum / static_cast<double>(m));
    const T var = static_cast<T>(std::max(0.0, sumsq / static_cast<double>(m) -
                                                   static_cast<double>(mu) * mu));
    const T inv = T(1) / std::sqrt(var + eps);
    const T g = gamma[ci], b = beta[ci];
    for (int in = 0; in < x.shape.n; ++in) {
      const T* xp = x.plane(in, ci);
      T* yp = y.plane(in, ci);
      T* xh = cache != nullptr ? cache->xhat.plane(in, ci) : nullptr;
      for (std::size_t i = 0; i < plane; ++i) {
        const T v = (xp[i] - mu) * inv;
        if (xh != nullptr) xh[i] = v;
        yp[i] = g * v + b;
      }
    }
    if (cache != nullptr) cache->inv_std[ci] = inv;
    if (run_mean != nullptr) run_mean[ci] = (T(1) - momentum) * run_mean[ci] + momentum * mu;
    if (run_var != nullptr) run_var[ci] = (T(1) - momentum) * run_var[ci] + momentum * var;
  }
  if (count != nullptr) *count += T(1);
  return y;
}

template <typename T>
void batch_norm_backward_acc(const Tensor<T>& grad_out, const T* gamma, const BnCache<T>& cache,
                             Tensor<T>* grad_x_acc, T* grad_gamma_acc, T* grad_beta_acc) {
  const Shape& s = cache.xhat.shape;
  if (!(grad_out.shape == s)) {
    throw std::invalid_argument("batch_norm_backward shape mismatch: " + grad_out.shape.str() +
                                " vs " + s.str());
  }
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const double m = static_cast<double>(s.n) * plane;
  for (int ci = 0; ci < s.c; ++ci) {
    double sum_g = 0, sum_gx = 0;
    for (int in = 0; in < s.n; ++in) {
      const T* gp = grad_out.plane(in, ci);
      const T* xh = cache.xhat.plane(in, ci);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += gp[i];
        sum_gx += static_cast<double>(gp[i]) * xh[i];
      }
    }
    if (grad_beta_acc != nullptr) grad_beta_acc[ci] += static_cast<T>(sum_g);
    if (grad_gamma_acc != nullptr) grad_gamma_acc[ci] += static_cast<T>(sum_gx);
    if (grad_x_acc != nullptr) {
      const T scale = gamma[ci] * cache.inv_std[ci] / static_cast<T>(m);
      const T mg = static_cast<T>(sum_g);
      const T mgx = static_cast<T>(sum_gx);
      for (int in = 0; in < s.n; ++in) {
        const T* gp = grad_out.plane(in, ci);
        const T* xh = cache.xhat.plane(in, ci);
        T* out = grad_x_acc->plane(in, ci);
        for (std::size_t i = 0; i < plane; ++i) {
          out[i] += scale * (static_cast<T>(m) * gp[i] - mg - xh[i] * mgx);
        }
      }
    }
  }
}

}  // namespace mwrdcnn
