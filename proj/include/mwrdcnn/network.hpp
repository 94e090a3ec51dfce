#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mwrdcnn/blocks.hpp"
#include "mwrdcnn/param_store.hpp"
#include "mwrdcnn/wavelet.hpp"

namespace mwrdcnn {

// Where batch norm goes. The default places it after every convolution
// except the very first conv block (right after the first analysis
// transform) and the final bare conv that synthesizes the output subbands.
enum class BnPolicy { kNone, kDefault };

struct ModelConfig {
  int levels = 3;
  std::vector<int> channels = {32, 64, 128};  // widths per level, outermost first
  int rdb_depth = 3;                          // conv blocks inside each residual dense block
  BnPolicy bn_policy = BnPolicy::kDefault;

  void validate() const {
    if (levels < 1) throw std::invalid_argument("config: levels must be >= 1, got " + std::to_string(levels));
    if (rdb_depth < 1) throw std::invalid_argument("config: rdb_depth must be >= 1, got " + std::to_string(rdb_depth));
    if (static_cast<int>(channels.size()) != levels) {
      throw std::invalid_argument("config: channels lists " + std::to_string(channels.size()) +
                                  " widths but levels=" + std::to_string(levels));
    }
    for (int i = 0; i < levels; ++i) {
      if (channels[i] < 1) {
        throw std::invalid_argument("config: level " + std::to_string(i + 1) +
                                    " width must be >= 1, got " + std::to_string(channels[i]));
      }
    }
  }

  bool operator==(const ModelConfig& o) const {
    return levels == o.levels && channels == o.channels && rdb_depth == o.rdb_depth &&
           bn_policy == o.bn_policy;
  }
};

// Mean squared error over the batch with the 1/(2N) convention: N is the
// batch size, the norm sums over all pixels of each sample.
template <typename T>
T loss_l2(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!(pred.shape == target.shape)) {
    throw std::invalid_argument("loss: prediction " + pred.shape.str() + " vs target " +
                                target.shape.str());
  }
  double s = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    s += d * d;
  }
  return static_cast<T>(s / (2.0 * pred.shape.n));
}

template <typename T>
Tensor<T> loss_l2_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!(pred.shape == target.shape)) {
    throw std::invalid_argument("loss: prediction " + pred.shape.str() + " vs target " +
                                target.shape.str());
  }
  Tensor<T> g(pred.shape);
  const T inv_n = T(1) / T(pred.shape.n);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    g.data[i] = (pred.data[i] - target.data[i]) * inv_n;
  }
  return g;
}

// U-shaped denoiser. The contracting path alternates analysis transform,
// conv block and residual dense block; the expanding path mirrors it with
// synthesis transforms and skip additions of the per-level dense-block
// outputs. The last conv block before the final synthesis is a bare conv
// (no batch norm, no ReLU) and the network output is the clean estimate
// itself -- there is no global input shortcut.
template <typename T>
class Network {
 public:
  explicit Network(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const bool bn = cfg_.bn_policy == BnPolicy::kDefault;
    const int L = cfg_.levels;
    for (int i = 1; i <= L; ++i) {
      ConvBlockSpec down;
      down.c_in = 4 * width(i - 1);
      down.c_out = width(i);
      down.use_bn = bn && i != 1;  // first block after the first analysis stays plain
      down.use_relu = true;
      down_cb_.emplace_back(down, "l" + std::to_string(i) + ".down.cb");
      RdbSpec rdb;
      rdb.channels = width(i);
      rdb.depth = cfg_.rdb_depth;
      rdb.bn = bn;
      down_rdb_.emplace_back(rdb, "l" + std::to_string(i) + ".down.rdb");
    }
    for (int i = 1; i <= L; ++i) {
      ConvBlockSpec up;
      up.c_in = width(i);
      up.c_out = 4 * width(i - 1);
      up.use_bn = bn && i != 1;
      up.use_relu = i != 1;  // level 1 emits the output subbands through a bare conv
      up_cb_.emplace_back(up, "l" + std::to_string(i) + ".up.cb");
      if (i < L) {
        RdbSpec rdb;
        rdb.channels = width(i);
        rdb.depth = cfg_.rdb_depth;
        rdb.bn = bn;
        up_rdb_.emplace_back(rdb, "l" + std::to_string(i) + ".up.rdb");
      }
    }
  }

  // Registration order is graph order: the contracting path level by level,
  // then the turn at the deepest level, then the expanding path back up.
  void register_params(ParamStore<T>& ps, std::mt19937& rng) const {
    const int L = cfg_.levels;
    for (int i = 1; i <= L; ++i) {
      down_cb_[i - 1].register_params(ps, rng);
      down_rdb_[i - 1].register_params(ps, rng);
    }
    up_cb_[L - 1].register_params(ps, rng);
    for (int i = L - 1; i >= 1; --i) {
      up_rdb_[i - 1].register_params(ps, rng);
      up_cb_[i - 1].register_params(ps, rng);
    }
  }

  Tensor<T> forward(const Tensor<T>& x, ParamStore<T>& ps, Mode mode) {
    check_input(x.shape);
    const int L = cfg_.levels;
    std::vector<Tensor<T>> stars(L);  // dense-block outputs of the contracting path
    for (int i = 1; i <= L; ++i) {
      Tensor<T> cur = dwt(i == 1 ? x : stars[i - 2]);
      Tensor<T> a = down_cb_[i - 1].forward(cur, ps, mode);
      stars[i - 1] = down_rdb_[i - 1].forward(a, ps, mode);
    }
    Tensor<T> up = idwt(up_cb_[L - 1].forward(stars[L - 1], ps, mode));
    for (int i = L - 1; i >= 1; --i) {
      Tensor<T> merged = add(up, stars[i - 1]);
      Tensor<T> r = up_rdb_[i - 1].forward(merged, ps, mode);
      up = idwt(up_cb_[i - 1].forward(r, ps, mode));
    }
    return up;
  }

  // Train-mode forward, loss, and full backward sweep. Parameter gradients
  // land in the store (zeroed first); returns the loss.
  T backward(const Tensor<T>& x, const Tensor<T>& target, ParamStore<T>& ps) {
    if (!(x.shape == target.shape)) {
      throw std::invalid_argument("network: input " + x.shape.str() + " vs target " +
                                  target.shape.str());
    }
    check_input(x.shape);
    ps.zero_grads();
    const int L = cfg_.levels;

    std::vector<Tensor<T>> stars(L);
    for (int i = 1; i <= L; ++i) {
      Tensor<T> cur = dwt(i == 1 ? x : stars[i - 2]);
      Tensor<T> a = down_cb_[i - 1].forward(cur, ps, Mode::kTrain);
      stars[i - 1] = down_rdb_[i - 1].forward(a, ps, Mode::kTrain);
    }
    Tensor<T> up = idwt(up_cb_[L - 1].forward(stars[L - 1], ps, Mode::kTrain));
    for (int i = L - 1; i >= 1; --i) {
      Tensor<T> merged = add(up, stars[i - 1]);
      Tensor<T> r = up_rdb_[i - 1].forward(merged, ps, Mode::kTrain);
      up = idwt(up_cb_[i - 1].forward(r, ps, Mode::kTrain));
    }

    const T loss = loss_l2(up, target);
    Tensor<T> g = loss_l2_grad(up, target);

    // Expanding path in reverse. Each skip addition sends the running
    // gradient both onward and into the matching contracting-path output.
    std::vector<Tensor<T>> g_star(L);
    for (int i = 1; i <= L - 1; ++i) {
      g = idwt_backward(g);
      g = up_cb_[i - 1].backward(g, ps);
      g = up_rdb_[i - 1].backward(g, ps);
      g_star[i - 1] = g;
    }
    g = idwt_backward(g);
    g_star[L - 1] = up_cb_[L - 1].backward(g, ps);

    // Contracting path in reverse; deeper levels feed their analysis-input
    // gradient into the level above before that level is processed.
    for (int i = L; i >= 1; --i) {
      Tensor<T> gc = down_rdb_[i - 1].backward(g_star[i - 1], ps);
      gc = down_cb_[i - 1].backward(gc, ps);
      if (i >= 2) add_into(g_star[i - 2], dwt_backward(gc));
    }
    return loss;
  }

  struct LevelBlocks {
    int down = 0;  // conv blocks on the contracting side of this level
    int up = 0;    // conv blocks on the expanding side
  };
  // index 0 = outermost level
  std::vector<LevelBlocks> conv_block_counts() const {
    std::vector<LevelBlocks> out(cfg_.levels);
    for (int i = 1; i <= cfg_.levels; ++i) {
      out[i - 1].down = 1 + down_rdb_[i - 1].conv_block_count();
      out[i - 1].up = i == cfg_.levels ? 1 : 1 + up_rdb_[i - 1].conv_block_count();
    }
    return out;
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  int width(int level) const { return level == 0 ? 1 : cfg_.channels[level - 1]; }

  void check_input(const Shape& s) const {
    if (s.c != 1) {
      throw std::invalid_argument("network expects single-channel input, got " + s.str());
    }
    const int grid = 1 << cfg_.levels;
    if (s.h % grid != 0 || s.w % grid != 0) {
      throw std::invalid_argument("network input " + s.str() + " must be a multiple of " +
                                  std::to_string(grid) + " on each side (use pad_to_grid)");
    }
  }

  ModelConfig cfg_;
  std::vector<ConvBlock<T>> down_cb_;
  std::vector<ResidualDenseBlock<T>> down_rdb_;
  std::vector<ConvBlock<T>> up_cb_;
  std::vector<ResidualDenseBlock<T>> up_rdb_;
};

// Fresh parameter store for the given architecture. Two calls with the same
// seed produce bit-identical stores.
template <typename T>
ParamStore<T> build(const ModelConfig& cfg, std::uint64_t seed) {
  Network<T> net(cfg);
  ParamStore<T> ps;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937 rng(seq);
  net.register_params(ps, rng);
  return ps;
}

// ---------------------------------------------------------------------------
// Reflect padding to the transform grid.

struct CropRecord {
  int h = 0;
  int w = 0;
};

namespace detail {
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace detail

// Reflect-pads the bottom/right edges so both spatial dims are multiples of
// 2^levels. Returns the padded tensor and the original size for crop_back.
template <typename T>
std::pair<Tensor<T>, CropRecord> pad_to_grid(const Tensor<T>& x, int levels) {
  if (levels < 1) throw std::invalid_argument("pad_to_grid: levels must be >= 1");
  const int grid = 1 << levels;
  const int H = (x.shape.h + grid - 1) / grid * grid;
  const int W = (x.shape.w + grid - 1) / grid * grid;
  CropRecord rec{x.shape.h, x.shape.w};
  if (H == x.shape.h && W == x.shape.w) return {x, rec};
  Tensor<T> y(x.shape.n, x.shape.c, H, W);
  for (int in = 0; in < x.shape.n; ++in) {
    for (int ci = 0; ci < x.shape.c; ++ci) {
      const T* src = x.plane(in, ci);
      T* dst = y.plane(in, ci);
      for (int iy = 0; iy < H; ++iy) {
        const int sy = detail::reflect_index(iy, x.shape.h);
        for (int ix = 0; ix < W; ++ix) {
          dst[iy * W + ix] = src[sy * x.shape.w + detail::reflect_index(ix, x.shape.w)];
        }
      }
    }
  }
  return {std::move(y), rec};
}

template <typename T>
Tensor<T> crop_back(const Tensor<T>& y, CropRecord rec) {
  if (rec.h > y.shape.h || rec.w > y.shape.w || rec.h < 1 || rec.w < 1) {
    throw std::invalid_argument("crop_back: target " + std::to_string(rec.h) + "x" +
                                std::to_string(rec.w) + " does not fit in " + y.shape.str());
  }
  if (rec.h == y.shape.h && rec.w == y.shape.w) return y;
  Tensor<T> out(y.shape.n, y.shape.c, rec.h, rec.w);
  for (int in = 0; in < y.shape.n; ++in) {
    for (int ci = 0; ci < y.shape.c; ++ci) {
      const T* src = y.plane(in, ci);
      T* dst = out.plane(in, ci);
      for (int iy = 0; iy < rec.h; ++iy) {
        std::copy_n(src + static_cast<std::size_t>(iy) * y.shape.w, rec.w,
                    dst + static_cast<std::size_t>(iy) * rec.w);
      }
    }
  }
  return out;
}

}  // namespace mwrdcnn
