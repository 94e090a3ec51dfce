#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mwrdcnn/param_store.hpp"
#include "mwrdcnn/tensor_ops.hpp"

namespace mwrdcnn {

inline constexpr float kBnEps = 1e-5f;
inline constexpr float kBnMomentum = 0.1f;

// conv(3x3, stride 1, pad 1) -> optional batch norm -> optional ReLU.
// Spatial dimensions are always preserved.
struct ConvBlockSpec {
  int c_in = 0;
  int c_out = 0;
  bool use_bn = false;
  bool use_relu = true;
  static constexpr int kKernel = 3;
};

template <typename T>
class ConvBlock {
 public:
  ConvBlock(ConvBlockSpec spec, std::string prefix) : spec_(spec), prefix_(std::move(prefix)) {
    if (spec_.c_in < 1 || spec_.c_out < 1) {
      throw std::invalid_argument("conv block " + prefix_ + ": channel counts must be >= 1");
    }
  }

  // Registers parameters in graph order. Weights draw from N(0, 2/fan_in)
  // element by element in row-major order; biases start at zero, batch norm
  // at the identity transform.
  void register_params(ParamStore<T>& ps, std::mt19937& rng) const {
    const int k = ConvBlockSpec::kKernel;
    Tensor<T> w(spec_.c_out, spec_.c_in, k, k);
    const T stddev = std::sqrt(T(2) / (T(spec_.c_in) * k * k));
    std::normal_distribution<T> dist(T(0), stddev);
    for (T& e : w.data) e = dist(rng);
    ps.add(prefix_ + ".w", std::move(w));
    ps.add(prefix_ + ".b", Tensor<T>(1, spec_.c_out, 1, 1));
    if (spec_.use_bn) {
      Tensor<T> gamma(1, spec_.c_out, 1, 1);
      gamma.fill(T(1));
      ps.add(prefix_ + ".bn.g", std::move(gamma));
      ps.add(prefix_ + ".bn.b", Tensor<T>(1, spec_.c_out, 1, 1));
      ps.add(prefix_ + ".bn.mean", Tensor<T>(1, spec_.c_out, 1, 1), /*trainable=*/false);
      Tensor<T> var(1, spec_.c_out, 1, 1);
      var.fill(T(1));
      ps.add(prefix_ + ".bn.var", std::move(var), /*trainable=*/false);
      ps.add(prefix_ + ".bn.count", Tensor<T>(1, 1, 1, 1), /*trainable=*/false);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& ps, Mode mode) {
    ParamEntry<T>& w = ps.at(prefix_ + ".w");
    ParamEntry<T>& b = ps.at(prefix_ + ".b");
    Tensor<T> y = conv2d(x, view_of(w.value, &b.value), 1, 1);
    const bool train = mode == Mode::kTrain;
    if (train) x_in_ = x;
    if (spec_.use_bn) {
      ParamEntry<T>& g = ps.at(prefix_ + ".bn.g");
      ParamEntry<T>& be = ps.at(prefix_ + ".bn.b");
      ParamEntry<T>& rm = ps.at(prefix_ + ".bn.mean");
      ParamEntry<T>& rv = ps.at(prefix_ + ".bn.var");
      ParamEntry<T>& cnt = ps.at(prefix_ + ".bn.count");
      y = batch_norm(y, g.value.data.data(), be.value.data.data(), rm.value.data.data(),
                     rv.value.data.data(), cnt.value.data.data(), mode, T(kBnEps), T(kBnMomentum),
                     train ? &bn_cache_ : nullptr);
    }
    if (spec_.use_relu) {
      if (train) pre_relu_ = y;
      y = relu(y);
    }
    saved_ = train;
    return y;
  }

  // Consumes the state saved by the last train-mode forward; accumulates
  // parameter gradients into the store and returns the input gradient.
  Tensor<T> backward(const Tensor<T>& grad_out, ParamStore<T>& ps) {
    if (!saved_) {
      throw std::runtime_error("conv block " + prefix_ + ": backward without a train-mode forward");
    }
    Tensor<T> g = grad_out;
    if (spec_.use_relu) g = relu_backward(pre_relu_, g);
    if (spec_.use_bn) {
      ParamEntry<T>& ga = ps.at(prefix_ + ".bn.g");
      ParamEntry<T>& be = ps.at(prefix_ + ".bn.b");
      ga.value.ensure_grad();
      be.value.ensure_grad();
      Tensor<T> gx(g.shape);
      batch_norm_backward_acc(g, ga.value.data.data(), bn_cache_, &gx, ga.value.grad.data(),
                              be.value.grad.data());
      g = std::move(gx);
    }
    ParamEntry<T>& w = ps.at(prefix_ + ".w");
    ParamEntry<T>& b = ps.at(prefix_ + ".b");
    w.value.ensure_grad();
    b.value.ensure_grad();
    Tensor<T> gin(x_in_.shape);
    conv2d_backward_acc(x_in_, view_of(w.value, &b.value), 1, 1, g, &gin, w.value.grad.data(),
                        b.value.grad.data());
    saved_ = false;
    return gin;
  }

  const ConvBlockSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }

 private:
  ConvBlockSpec spec_;
  std::string prefix_;
  Tensor<T> x_in_;
  Tensor<T> pre_relu_;
  BnCache<T> bn_cache_;
  bool saved_ = false;
};

// Residual dense block over a fixed channel width c: `depth` conv blocks with
// dense concatenation (block t sees (t+1)*c channels, emits c), a 3x3 fusion
// conv squeezing (depth+1)*c back to c, and a shortcut add of the block input.
struct RdbSpec {
  int channels = 0;
  int depth = 3;
  bool bn = false;  // batch norm inside the internal conv blocks
};

template <typename T>
class ResidualDenseBlock {
 public:
  ResidualDenseBlock(RdbSpec spec, std::string prefix) : spec_(spec), prefix_(std::move(prefix)) {
    if (spec_.channels < 1) throw std::invalid_argument("rdb " + prefix_ + ": channels must be >= 1");
    if (spec_.depth < 1) throw std::invalid_argument("rdb " + prefix_ + ": depth must be >= 1");
    for (int t = 0; t < spec_.depth; ++t) {
      ConvBlockSpec cb;
      cb.c_in = (t + 1) * spec_.channels;
      cb.c_out = spec_.channels;
      cb.use_bn = spec_.bn;
      cb.use_relu = true;
      blocks_.emplace_back(cb, prefix_ + ".cb" + std::to_string(t + 1));
    }
  }

  void register_params(ParamStore<T>& ps, std::mt19937& rng) const {
    for (const ConvBlock<T>& b : blocks_) b.register_params(ps, rng);
    const int k = ConvBlockSpec::kKernel;
    const int c_in = pre_fusion_channels();
    Tensor<T> w(spec_.channels, c_in, k, k);
    const T stddev = std::sqrt(T(2) / (T(c_in) * k * k));
    std::normal_distribution<T> dist(T(0), stddev);
    for (T& e : w.data) e = dist(rng);
    ps.add(prefix_ + ".fuse.w", std::move(w));
    ps.add(prefix_ + ".fuse.b", Tensor<T>(1, spec_.channels, 1, 1));
  }

  Tensor<T> forward(const Tensor<T>& r, ParamStore<T>& ps, Mode mode) {
    if (r.shape.c != spec_.channels) {
      throw std::invalid_argument("rdb " + prefix_ + ": expected c=" + std::to_string(spec_.channels) +
                                  ", got " + r.shape.str());
    }
    Tensor<T> state = r;
    for (ConvBlock<T>& b : blocks_) {
      Tensor<T> out = b.forward(state, ps, mode);
      state = concat_channels(state, out);
    }
    const bool train = mode == Mode::kTrain;
    if (train) fuse_in_ = state;
    ParamEntry<T>& fw = ps.at(prefix_ + ".fuse.w");
    ParamEntry<T>& fb = ps.at(prefix_ + ".fuse.b");
    Tensor<T> fused = conv2d(state, view_of(fw.value, &fb.value), 1, 1);
    saved_ = train;
    return add(r, fused);
  }

  Tensor<T> backward(const Tensor<T>& grad_out, ParamStore<T>& ps) {
    if (!saved_) {
      throw std::runtime_error("rdb " + prefix_ + ": backward without a train-mode forward");
    }
    ParamEntry<T>& fw = ps.at(prefix_ + ".fuse.w");
    ParamEntry<T>& fb = ps.at(prefix_ + ".fuse.b");
    fw.value.ensure_grad();
    fb.value.ensure_grad();
    Tensor<T> g_state(fuse_in_.shape);
    conv2d_backward_acc(fuse_in_, view_of(fw.value, &fb.value), 1, 1, grad_out, &g_state,
                        fw.value.grad.data(), fb.value.grad.data());
    const int c = spec_.channels;
    for (int t = spec_.depth - 1; t >= 0; --t) {
      Tensor<T> g_prev = slice_channels(g_state, 0, (t + 1) * c);
      Tensor<T> g_out = slice_channels(g_state, (t + 1) * c, (t + 2) * c);
      add_into(g_prev, blocks_[t].backward(g_out, ps));
      g_state = std::move(g_prev);
    }
    // Shortcut: the block input also feeds the output sum directly.
    add_into(g_state, grad_out);
    saved_ = false;
    return g_state;
  }

  int pre_fusion_channels() const { return (spec_.depth + 1) * spec_.channels; }
  int conv_block_count() const { return spec_.depth; }
  const RdbSpec& spec() const { return spec_; }
  const std::string& prefix() const { return prefix_; }

 private:
  RdbSpec spec_;
  std::string prefix_;
  std::vector<ConvBlock<T>> blocks_;
  Tensor<T> fuse_in_;
  bool saved_ = false;
};

}  // namespace mwrdcnn
