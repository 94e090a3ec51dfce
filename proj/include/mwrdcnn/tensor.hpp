#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mwrdcnn {

// Execution mode for layers that behave differently while optimizing
// (batch-norm statistics, cache retention for the backward pass).
enum class Mode { kTrain, kInfer };

struct Shape {
  int n = 0;  // batch
  int c = 0;  // channels
  int h = 0;  // rows
  int w = 0;  // cols

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * static_cast<std::size_t>(h) * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Dense NCHW tensor, row-major within (n,c,h,w). `grad` is either empty or
// holds exactly one value per element of `data`. This is the only value type
// flowing through the network; outputs of an operation are never mutated
// afterwards except through their grad buffer.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;
  Tensor(int n, int c, int h, int w) : shape{n, c, h, w} {
    if (n < 1 || c < 1 || h < 1 || w < 1) {
      throw std::invalid_argument("tensor dims must all be >= 1, got " + shape.str());
    }
    data.assign(shape.numel(), T(0));
  }
  explicit Tensor(Shape s) : Tensor(s.n, s.c, s.h, s.w) {}

  std::size_t numel() const { return data.size(); }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * shape.c + ic) * shape.h + iy) * shape.w + ix;
  }
  T& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  const T& at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  // Pointer to the start of one (n, c) plane.
  T* plane(int in, int ic) { return data.data() + index(in, ic, 0, 0); }
  const T* plane(int in, int ic) const { return data.data() + index(in, ic, 0, 0); }

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
  }
  void drop_grad() { grad.clear(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

// Learned or fixed convolution kernel bank. Weights are laid out
// (c_out, c_in, kh, kw) row-major; bias has one entry per output channel.
// Non-trainable filters (the wavelet bank) are never touched by the optimizer.
template <typename T>
struct ConvFilter {
  int c_out = 0;
  int c_in = 0;
  int kh = 0;
  int kw = 0;
  std::vector<T> weights;
  std::vector<T> bias;
  bool trainable = true;

  ConvFilter() = default;
  ConvFilter(int co, int ci, int kh_, int kw_)
      : c_out(co), c_in(ci), kh(kh_), kw(kw_),
        weights(static_cast<std::size_t>(co) * ci * kh_ * kw_, T(0)),
        bias(static_cast<std::size_t>(co), T(0)) {
    if (co < 1 || ci < 1 || kh_ < 1 || kw_ < 1) {
      throw std::invalid_argument("filter dims must all be >= 1");
    }
  }

  std::size_t windex(int co, int ci, int u, int v) const {
    return ((static_cast<std::size_t>(co) * c_in + ci) * kh + u) * kw + v;
  }
  T& w_at(int co, int ci, int u, int v) { return weights[windex(co, ci, u, v)]; }
  const T& w_at(int co, int ci, int u, int v) const { return weights[windex(co, ci, u, v)]; }
};

// Non-owning view used internally so conv kernels can come either from a
// ConvFilter or from weight/bias tensors held in a parameter store.
template <typename T>
struct FilterView {
  int c_out = 0;
  int c_in = 0;
  int kh = 0;
  int kw = 0;
  const T* weights = nullptr;
  const T* bias = nullptr;  // may be null (no bias term)
};

template <typename T>
FilterView<T> view_of(const ConvFilter<T>& f) {
  return {f.c_out, f.c_in, f.kh, f.kw, f.weights.data(), f.bias.data()};
}

// weight tensor (c_out, c_in, kh, kw); bias tensor (1, c_out, 1, 1) or null.
template <typename T>
FilterView<T> view_of(const Tensor<T>& weight, const Tensor<T>* bias) {
  FilterView<T> v{weight.shape.n, weight.shape.c, weight.shape.h, weight.shape.w,
                  weight.data.data(), nullptr};
  if (bias != nullptr) {
    if (bias->shape.c != v.c_out || bias->numel() != static_cast<std::size_t>(v.c_out)) {
      throw std::invalid_argument("bias shape " + bias->shape.str() +
                                  " does not match c_out=" + std::to_string(v.c_out));
    }
    v.bias = bias->data.data();
  }
  return v;
}

}  // namespace mwrdcnn
