#pragma once

#include <stdexcept>
#include <string>

#include "mwrdcnn/tensor_ops.hpp"

namespace mwrdcnn {

// The four fixed 2x2 analysis filters: average, horizontal detail, vertical
// detail, diagonal detail. They are pairwise orthogonal with squared norm 4;
// no normalization is applied on the analysis side, the synthesis side
// divides by 4 instead, so dwt(x) carries 4x the energy of x and idwt(dwt(x))
// reproduces x exactly.
template <typename T>
struct HaarBank {
  ConvFilter<T> f_a{1, 1, 2, 2};
  ConvFilter<T> f_h{1, 1, 2, 2};
  ConvFilter<T> f_v{1, 1, 2, 2};
  ConvFilter<T> f_d{1, 1, 2, 2};

  HaarBank() {
    f_a.weights = {T(1), T(1), T(1), T(1)};
    f_h.weights = {T(-1), T(1), T(-1), T(1)};
    f_v.weights = {T(-1), T(-1), T(1), T(1)};
    f_d.weights = {T(1), T(-1), T(-1), T(1)};
    for (ConvFilter<T>* f : {&f_a, &f_h, &f_v, &f_d}) {
      f->bias = {T(0)};
      f->trainable = false;
    }
  }

  const ConvFilter<T>& operator[](int i) const {
    switch (i) {
      case 0: return f_a;
      case 1: return f_h;
      case 2: return f_v;
      case 3: return f_d;
      default: throw std::out_of_range("HaarBank index " + std::to_string(i));
    }
  }
};

namespace detail {

inline void require_even(const Shape& s, const char* what) {
  if (s.h % 2 != 0 || s.w % 2 != 0) {
    throw std::invalid_argument(std::string(what) + ": spatial dims of " + s.str() +
                                " must be even (pad the input to the transform grid first)");
  }
}

// Shared analysis kernel: each 2x2 block (a b / c d) of every input channel
// maps to the four subband coefficients, scaled by `scale`. Output channel
// layout is [A | H | V | D], each group `c` wide.
template <typename T>
Tensor<T> dwt_core(const Tensor<T>& x, T scale) {
  require_even(x.shape, "dwt");
  const int c = x.shape.c, h2 = x.shape.h / 2, w2 = x.shape.w / 2, w = x.shape.w;
  Tensor<T> y(x.shape.n, 4 * c, h2, w2);
  for (int in = 0; in < x.shape.n; ++in) {
    for (int ci = 0; ci < c; ++ci) {
      const T* p = x.plane(in, ci);
      T* pa = y.plane(in, ci);
      T* ph = y.plane(in, c + ci);
      T* pv = y.plane(in, 2 * c + ci);
      T* pd = y.plane(in, 3 * c + ci);
      for (int oy = 0; oy < h2; ++oy) {
        for (int ox = 0; ox < w2; ++ox) {
          const T a = p[(2 * oy) * w + 2 * ox];
          const T b = p[(2 * oy) * w + 2 * ox + 1];
          const T cc = p[(2 * oy + 1) * w + 2 * ox];
          const T d = p[(2 * oy + 1) * w + 2 * ox + 1];
          const int o = oy * w2 + ox;
          pa[o] = scale * (a + b + cc + d);
          ph[o] = scale * (-a + b - cc + d);
          pv[o] = scale * (-a - b + cc + d);
          pd[o] = scale * (a - b - cc + d);
        }
      }
    }
  }
  return y;
}

// Shared synthesis kernel: subband quadruples scatter back onto 2x2 blocks
// through the same filters, scaled by `scale`.
template <typename T>
Tensor<T> idwt_core(const Tensor<T>& s, T scale) {
  if (s.shape.c % 4 != 0) {
    throw std::invalid_argument("idwt: channel count of " + s.shape.str() +
                                " must be a multiple of 4 ([A|H|V|D] groups)");
  }
  const int c = s.shape.c / 4, h = s.shape.h, w = s.shape.w;
  Tensor<T> y(s.shape.n, c, 2 * h, 2 * w);
  const int W = 2 * w;
  for (int in = 0; in < s.shape.n; ++in) {
    for (int ci = 0; ci < c; ++ci) {
      const T* pa = s.plane(in, ci);
      const T* ph = s.plane(in, c + ci);
      const T* pv = s.plane(in, 2 * c + ci);
      const T* pd = s.plane(in, 3 * c + ci);
      T* out = y.plane(in, ci);
      for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < w; ++ix) {
          const int i = iy * w + ix;
          const T a = pa[i], hh = ph[i], vv = pv[i], dd = pd[i];
          T* blk = out + (2 * iy) * W + 2 * ix;
          blk[0] = scale * (a - hh - vv + dd);
          blk[1] = scale * (a + hh - vv - dd);
          blk[W] = scale * (a - hh + vv - dd);
          blk[W + 1] = scale * (a + hh + vv + dd);
        }
      }
    }
  }
  return y;
}

}  // namespace detail

// (n, c, h, w) -> (n, 4c, h/2, w/2); h and w must be even.
template <typename T>
Tensor<T> dwt(const Tensor<T>& x) {
  return detail::dwt_core(x, T(1));
}

// (n, 4c, h, w) -> (n, c, 2h, 2w); exact inverse of dwt.
template <typename T>
Tensor<T> idwt(const Tensor<T>& s) {
  return detail::idwt_core(s, T(1) / T(4));
}

// Adjoint of dwt: the unscaled synthesis, i.e. 4 * idwt(grad).
template <typename T>
Tensor<T> dwt_backward(const Tensor<T>& grad_out) {
  return detail::idwt_core(grad_out, T(1));
}

// Adjoint of idwt: the analysis scaled by the synthesis factor, dwt(grad) / 4.
template <typename T>
Tensor<T> idwt_backward(const Tensor<T>& grad_out) {
  return detail::dwt_core(grad_out, T(1) / T(4));
}

}  // namespace mwrdcnn
