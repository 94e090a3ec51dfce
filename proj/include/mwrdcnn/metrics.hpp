#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "mwrdcnn/image_io.hpp"
#include "mwrdcnn/network.hpp"

namespace mwrdcnn {

// Pixel values are [0,1]; all metrics are quoted on the 0..255 scale.

inline double mse255(const float* a, const float* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = (static_cast<double>(a[i]) - b[i]) * 255.0;
    s += d * d;
  }
  return s / static_cast<double>(n);
}

inline double psnr_from_mse(double mse) {
  if (mse <= 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double mse255(const GrayImage& a, const GrayImage& b);
double psnr(const GrayImage& a, const GrayImage& b);

// Mean SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5,
// K1=0.01, K2=0.03, L=255). Throws if either side is smaller than the window.
double ssim(const GrayImage& a, const GrayImage& b);
double ssim(const float* a, const float* b, int h, int w);

// PSNR of clean vs clean + N(0, sigma^2) noise, in expectation.
inline double expected_noisy_psnr(double sigma) {
  return 10.0 * std::log10(255.0 * 255.0 / (sigma * sigma));
}

// ---------------------------------------------------------------------------
// Whole-dataset evaluation under synthetic noise.

using DenoiseFn = std::function<Tensor<float>(const Tensor<float>&)>;

struct EvalOptions {
  double sigma = 25.0;
  std::uint64_t seed = 0;
  bool clamp = true;            // clamp estimates to [0,1] before scoring
  bool also_unclamped = false;  // additionally report the unclamped PSNR
};

struct EvalRow {
  std::string name;
  double psnr_noisy = 0;  // baseline of the raw noisy image, never clamped
  double psnr = 0;
  double ssim = 0;
  double psnr_unclamped = std::numeric_limits<double>::quiet_NaN();
  bool infinite = false;  // exact reconstruction; excluded from mean PSNR
};

struct EvalReport {
  EvalOptions options;
  std::vector<EvalRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
  double mean_psnr_noisy = 0;
  int excluded_from_mean = 0;

  void write_lines(std::ostream& os) const;  // key=value, one line per image
  void write_table(std::ostream& os) const;
};

// Noise for image i comes from an engine seeded with (options.seed, i), where
// i is the position in the dataset's sorted name order, so reports are
// reproducible image by image. The denoiser sees the raw noisy tensor and
// must return one of the same shape.
EvalReport eval_dataset(const DenoiseFn& denoise, const Dataset& ds, const EvalOptions& options);

// Pads to the transform grid, runs the network in inference mode, crops back.
inline DenoiseFn make_network_denoiser(Network<float>& net, ParamStore<float>& ps) {
  return [&net, &ps](const Tensor<float>& noisy) {
    auto [padded, rec] = pad_to_grid(noisy, net.config().levels);
    return crop_back(net.forward(padded, ps, Mode::kInfer), rec);
  };
}

// ---------------------------------------------------------------------------
// Wall-clock benchmark of a denoiser over a dataset.

struct BenchResult {
  std::vector<double> rep_seconds;  // mean seconds per image, per repetition
  double mean = 0;
  double cv = 0;  // stddev / mean over repetitions
};

BenchResult bench_forward(const DenoiseFn& denoise, const Dataset& ds, int reps, int warmup);

}  // namespace mwrdcnn
