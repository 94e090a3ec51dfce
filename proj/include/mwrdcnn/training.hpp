#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mwrdcnn/image_io.hpp"
#include "mwrdcnn/network.hpp"

namespace mwrdcnn {

// ---------------------------------------------------------------------------
// Learning-rate schedule: piecewise stages, each log-linear from its first to
// its last epoch (endpoints hit exactly).

struct LrStage {
  int epochs = 0;
  double log10_start = 0;
  double log10_end = 0;
};

inline std::vector<LrStage> default_lr_stages() {
  return {{15, -3.0, -3.0}, {20, -3.8, -4.0}, {10, -4.5, -5.0}};
}

inline double lr_at(int epoch, const std::vector<LrStage>& stages) {
  if (epoch < 0) throw std::out_of_range("lr_at: negative epoch");
  int e = epoch;
  int total = 0;
  for (const LrStage& s : stages) {
    total += s.epochs;
    if (e < s.epochs) {
      const double t = s.epochs == 1 ? 0.0 : static_cast<double>(e) / (s.epochs - 1);
      return std::pow(10.0, std::lerp(s.log10_start, s.log10_end, t));
    }
    e -= s.epochs;
  }
  throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " is past the " +
                          std::to_string(total) + "-epoch schedule");
}

// ---------------------------------------------------------------------------

struct TrainConfig {
  double sigma = 25.0;  // noise level on the 0..255 scale
  int patch = 152;
  int batch = 32;
  std::vector<LrStage> stages = default_lr_stages();
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int steps_per_epoch = 0;      // 0 = non-overlapping patch count / batch
  std::uint64_t max_steps = 0;  // 0 = run the whole schedule
  int checkpoint_every = 1;     // epochs between checkpoint emissions
  int val_images = 4;           // images probed for the per-epoch PSNR

  int total_epochs() const {
    int t = 0;
    for (const LrStage& s : stages) t += s.epochs;
    return t;
  }

  void validate() const {
    if (sigma <= 0) throw std::invalid_argument("config: sigma must be > 0");
    if (patch < 2) throw std::invalid_argument("config: patch must be >= 2");
    if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
    if (stages.empty()) throw std::invalid_argument("config: empty learning-rate schedule");
    for (const LrStage& s : stages) {
      if (s.epochs < 0) throw std::invalid_argument("config: negative stage length");
    }
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw std::invalid_argument("config: Adam betas must be in [0, 1)");
    }
    if (adam_eps <= 0) throw std::invalid_argument("config: adam_eps must be > 0");
    if (steps_per_epoch < 0) throw std::invalid_argument("config: steps_per_epoch must be >= 0");
    if (checkpoint_every < 1) throw std::invalid_argument("config: checkpoint_every must be >= 1");
    if (val_images < 1) throw std::invalid_argument("config: val_images must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Noise synthesis. Sigma lives on the 0..255 scale; the samples are scaled
// by 1/255 to match the [0,1] pixel range. Output is deliberately not
// clipped. A fresh distribution is used per call so that only the engine
// state carries across steps.

template <typename T>
Tensor<T> add_gaussian_noise(const Tensor<T>& clean, double sigma, std::mt19937& rng) {
  if (sigma <= 0) throw std::invalid_argument("add_gaussian_noise: sigma must be > 0");
  std::normal_distribution<T> dist(T(0), static_cast<T>(sigma / 255.0));
  Tensor<T> noisy(clean.shape);
  for (std::size_t i = 0; i < clean.data.size(); ++i) noisy.data[i] = clean.data[i] + dist(rng);
  return noisy;
}

// ---------------------------------------------------------------------------
// Square-patch symmetries: ids 0..7 are rot90^k counterclockwise (k = id % 4)
// applied after a horizontal flip when id >= 4.

template <typename T>
void dihedral_apply(int id, int p, const T* src, T* dst) {
  if (id < 0 || id > 7) throw std::invalid_argument("dihedral id must be in 0..7");
  const std::size_t n = static_cast<std::size_t>(p) * p;
  std::vector<T> a(src, src + n), b(n);
  if (id >= 4) {
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) b[y * p + x] = a[y * p + (p - 1 - x)];
    a.swap(b);
  }
  for (int t = 0; t < id % 4; ++t) {
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) b[y * p + x] = a[x * p + (p - 1 - y)];
    a.swap(b);
  }
  std::copy(a.begin(), a.end(), dst);
}

inline int dihedral_inverse(int id) {
  if (id < 0 || id > 7) throw std::invalid_argument("dihedral id must be in 0..7");
  return id < 4 ? (4 - id) % 4 : id;
}

// ---------------------------------------------------------------------------
// Patch sampling. Per batch item the draw order is: image index, top, left,
// symmetry id; noise is then drawn over the whole batch in one pass. All
// randomness comes from the one engine passed in.

template <typename T>
struct PatchBatch {
  Tensor<T> clean;
  Tensor<T> noisy;
  struct Item {
    int image = 0, y = 0, x = 0, aug = 0;
  };
  std::vector<Item> items;
};

template <typename T>
PatchBatch<T> sample_patches(const Dataset& ds, int patch, int batch, double sigma,
                             std::mt19937& rng) {
  std::vector<int> eligible;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    if (ds.images[i].h >= patch && ds.images[i].w >= patch) eligible.push_back(static_cast<int>(i));
  }
  if (eligible.empty()) {
    throw std::invalid_argument("sample_patches: no image is at least " + std::to_string(patch) +
                                "x" + std::to_string(patch));
  }
  PatchBatch<T> pb;
  pb.clean = Tensor<T>(batch, 1, patch, patch);
  pb.items.resize(batch);
  std::vector<T> crop(static_cast<std::size_t>(patch) * patch);
  for (int b = 0; b < batch; ++b) {
    const int img = eligible[std::uniform_int_distribution<int>(
        0, static_cast<int>(eligible.size()) - 1)(rng)];
    const GrayImage& im = ds.images[img];
    const int y = std::uniform_int_distribution<int>(0, im.h - patch)(rng);
    const int x = std::uniform_int_distribution<int>(0, im.w - patch)(rng);
    const int aug = std::uniform_int_distribution<int>(0, 7)(rng);
    for (int r = 0; r < patch; ++r) {
      for (int cc = 0; cc < patch; ++cc) {
        crop[r * patch + cc] = static_cast<T>(im.at(y + r, x + cc));
      }
    }
    dihedral_apply(aug, patch, crop.data(), pb.clean.plane(b, 0));
    pb.items[b] = {img, y, x, aug};
  }
  pb.noisy = add_gaussian_noise(pb.clean, sigma, rng);
  return pb;
}

// ---------------------------------------------------------------------------
// Adam with bias correction; t is 1-based. Non-trainable entries are never
// touched. Throws if a trainable entry has no gradient.

template <typename T>
void adam_step(ParamStore<T>& ps, double lr, std::uint64_t t, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8) {
  if (t < 1) throw std::invalid_argument("adam_step: t is 1-based");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const std::string& name : ps.names()) {
    ParamEntry<T>& e = ps.at(name);
    if (!e.trainable) continue;
    if (!e.value.has_grad()) throw std::runtime_error("adam_step: no gradient for " + name);
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      const double g = static_cast<double>(e.value.grad[i]);
      const double m = beta1 * static_cast<double>(e.m.data[i]) + (1.0 - beta1) * g;
      const double v = beta2 * static_cast<double>(e.v.data[i]) + (1.0 - beta2) * g * g;
      e.m.data[i] = static_cast<T>(m);
      e.v.data[i] = static_cast<T>(v);
      e.value.data[i] -= static_cast<T>(lr * (m / bc1) / (std::sqrt(v / bc2) + eps));
    }
  }
}

// ---------------------------------------------------------------------------
// Engine state serialization (decimal token stream; exact round trip).

inline std::string rng_to_string(const std::mt19937& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline std::mt19937 rng_from_string(const std::string& s) {
  std::mt19937 rng;
  std::istringstream is(s);
  is >> rng;
  if (is.fail()) throw std::runtime_error("corrupt RNG state string");
  return rng;
}

// ---------------------------------------------------------------------------
// The training loop.

struct StepRecord {
  int epoch = 0;
  std::uint64_t step = 0;  // 1-based count of completed steps
  double lr = 0;
  double loss = 0;
};

struct EpochRecord {
  int epoch = 0;  // 0-based epoch that just finished
  double val_psnr = 0;
};

struct TrainProgress {
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::string rng_state;    // engine state right after the last step
};

struct TrainSinks {
  std::function<bool(const StepRecord&)> on_step;  // return false to stop early
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const TrainProgress&)> on_checkpoint;
};

struct TrainResult {
  std::uint64_t steps_run = 0;
  double first_loss = 0;
  double last_loss = 0;
  bool stopped_early = false;
};

// One epoch covers the dataset's non-overlapping patch capacity.
inline std::uint64_t derived_steps_per_epoch(const Dataset& ds, int patch, int batch) {
  std::uint64_t patches = 0;
  for (const GrayImage& im : ds.images) {
    patches += static_cast<std::uint64_t>(im.h / patch) * static_cast<std::uint64_t>(im.w / patch);
  }
  return std::max<std::uint64_t>(1, patches / static_cast<std::uint64_t>(batch));
}

// Mean PSNR (dB) of the clamped network output over up to max_images images,
// each corrupted with its own fixed-seed noise so the training stream is
// untouched.
template <typename T>
double validation_psnr(Network<T>& net, ParamStore<T>& ps, const Dataset& ds, double sigma,
                       std::uint64_t seed, int max_images) {
  const int n = static_cast<int>(std::min<std::size_t>(ds.images.size(),
                                                       static_cast<std::size_t>(std::max(1, max_images))));
  double acc = 0;
  for (int i = 0; i < n; ++i) {
    Tensor<T> clean = image_to_tensor(ds.images[i]).template cast<T>();
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(i), 0x76616c00u};
    std::mt19937 r(sq);
    Tensor<T> noisy = add_gaussian_noise(clean, sigma, r);
    auto [padded, rec] = pad_to_grid(noisy, net.config().levels);
    Tensor<T> out = crop_back(net.forward(padded, ps, Mode::kInfer), rec);
    double se = 0;
    for (std::size_t k = 0; k < out.data.size(); ++k) {
      const double d = std::clamp(static_cast<double>(out.data[k]), 0.0, 1.0) -
                       static_cast<double>(clean.data[k]);
      se += d * d;
    }
    const double mse = se / static_cast<double>(out.data.size());
    acc += mse > 0 ? -10.0 * std::log10(mse) : std::numeric_limits<double>::infinity();
  }
  return acc / n;
}

// Runs (or resumes) the schedule. Parameter state, optimizer moments and the
// RNG engine all live outside this function, so a checkpoint taken through
// the sink and fed back via `resume` continues the exact same trajectory.
// Throws on a non-finite loss with the gradient stats in the message.
template <typename T>
TrainResult train(Network<T>& net, ParamStore<T>& ps, const TrainConfig& tc,
                  const Dataset& train_ds, const Dataset* val_ds, const TrainSinks& sinks = {},
                  const TrainProgress* resume = nullptr) {
  tc.validate();
  const int grid = 1 << net.config().levels;
  if (tc.patch % grid != 0) {
    throw std::invalid_argument("config: patch " + std::to_string(tc.patch) +
                                " must be a multiple of the transform grid " + std::to_string(grid));
  }
  const std::uint64_t spe = tc.steps_per_epoch > 0
                                ? static_cast<std::uint64_t>(tc.steps_per_epoch)
                                : derived_steps_per_epoch(train_ds, tc.patch, tc.batch);
  std::uint64_t total = spe * static_cast<std::uint64_t>(tc.total_epochs());
  if (tc.max_steps > 0) total = std::min(total, tc.max_steps);

  std::seed_seq sq{static_cast<std::uint32_t>(tc.seed), static_cast<std::uint32_t>(tc.seed >> 32),
                   0x7472c1b2u};
  std::mt19937 rng(sq);
  std::uint64_t start = 0;
  if (resume != nullptr) {
    start = resume->step;
    if (start > total) {
      throw std::invalid_argument("resume: checkpoint is at step " + std::to_string(start) +
                                  " but the schedule ends at " + std::to_string(total));
    }
    if (!resume->rng_state.empty()) rng = rng_from_string(resume->rng_state);
  }

  TrainResult res;
  std::uint64_t gs = start;
  for (; gs < total; ++gs) {
    const int epoch = static_cast<int>(gs / spe);
    const double lr = lr_at(epoch, tc.stages);
    PatchBatch<T> batch = sample_patches<T>(train_ds, tc.patch, tc.batch, tc.sigma, rng);
    const T loss = net.backward(batch.noisy, batch.clean, ps);
    if (!std::isfinite(static_cast<double>(loss))) {
      const auto stats = ps.grad_stats();
      std::ostringstream os;
      os << "training diverged: non-finite loss at step " << gs + 1 << " (lr=" << lr
         << ", grad max=" << stats.max_abs << ", grad l2=" << stats.l2 << ")";
      throw std::runtime_error(os.str());
    }
    adam_step(ps, lr, gs + 1, tc.beta1, tc.beta2, tc.adam_eps);
    if (gs == start) res.first_loss = static_cast<double>(loss);
    res.last_loss = static_cast<double>(loss);
    ++res.steps_run;

    bool keep_going = true;
    if (sinks.on_step) {
      keep_going = sinks.on_step(StepRecord{epoch, gs + 1, lr, static_cast<double>(loss)});
    }
    const std::uint64_t done = gs + 1;
    if (done % spe == 0) {
      const std::uint64_t epochs_done = done / spe;
      if (sinks.on_epoch) {
        const Dataset* vd = (val_ds != nullptr && !val_ds->images.empty()) ? val_ds : &train_ds;
        sinks.on_epoch(EpochRecord{static_cast<int>(epochs_done) - 1,
                                   validation_psnr(net, ps, *vd, tc.sigma, tc.seed, tc.val_images)});
      }
      if (sinks.on_checkpoint && epochs_done % static_cast<std::uint64_t>(tc.checkpoint_every) == 0) {
        sinks.on_checkpoint(TrainProgress{epochs_done, done, rng_to_string(rng)});
      }
    }
    if (!keep_going) {
      res.stopped_early = true;
      ++gs;
      break;
    }
  }
  if (sinks.on_checkpoint) {
    sinks.on_checkpoint(TrainProgress{gs / spe, gs, rng_to_string(rng)});
  }
  return res;
}

}  // namespace mwrdcnn
