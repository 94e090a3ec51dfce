#include "mwrdcnn/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mwrdcnn/training.hpp"

namespace mwrdcnn {
namespace {

constexpr int kWin = 11;
constexpr double kC1 = 6.5025;   // (0.01 * 255)^2
constexpr double kC2 = 58.5225;  // (0.03 * 255)^2

const std::vector<double>& gauss_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(kWin);
    double s = 0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - (kWin - 1) / 2;
      v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      s += v[i];
    }
    for (double& e : v) e /= s;
    return v;
  }();
  return k;
}

// Valid-mode separable blur: (h, w) -> (h - 10, w - 10).
std::vector<double> blur_valid(const std::vector<double>& img, int h, int w) {
  const std::vector<double>& k = gauss_kernel();
  const int ow = w - kWin + 1;
  const int oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    const double* row = img.data() + static_cast<std::size_t>(y) * w;
    double* out = tmp.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWin; ++i) s += k[i] * row[x + i];
      out[x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    double* dst = out.data() + static_cast<std::size_t>(y) * ow;
    for (int x = 0; x < ow; ++x) {
      double s = 0;
      for (int i = 0; i < kWin; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      dst[x] = s;
    }
  }
  return out;
}

void check_same_dims(int ha, int wa, int hb, int wb, const char* what) {
  if (ha != hb || wa != wb) {
    throw std::invalid_argument(std::string(what) + ": image sizes differ (" + std::to_string(wa) +
                                "x" + std::to_string(ha) + " vs " + std::to_string(wb) + "x" +
                                std::to_string(hb) + ")");
  }
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

double mse255(const GrayImage& a, const GrayImage& b) {
  check_same_dims(a.h, a.w, b.h, b.w, "mse");
  return mse255(a.pix.data(), b.pix.data(), a.pix.size());
}

double psnr(const GrayImage& a, const GrayImage& b) { return psnr_from_mse(mse255(a, b)); }

double ssim(const float* a, const float* b, int h, int w) {
  if (h < kWin || w < kWin) {
    throw std::invalid_argument("ssim: image " + std::to_string(w) + "x" + std::to_string(h) +
                                " is smaller than the " + std::to_string(kWin) + "x" +
                                std::to_string(kWin) + " window");
  }
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a[i] * 255.0;
    y[i] = b[i] * 255.0;
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const std::vector<double> mu1 = blur_valid(x, h, w);
  const std::vector<double> mu2 = blur_valid(y, h, w);
  const std::vector<double> e_xx = blur_valid(xx, h, w);
  const std::vector<double> e_yy = blur_valid(yy, h, w);
  const std::vector<double> e_xy = blur_valid(xy, h, w);
  double acc = 0;
  for (std::size_t i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1[i], m2 = mu2[i];
    const double s11 = e_xx[i] - m1 * m1;
    const double s22 = e_yy[i] - m2 * m2;
    const double s12 = e_xy[i] - m1 * m2;
    acc += ((2 * m1 * m2 + kC1) * (2 * s12 + kC2)) /
           ((m1 * m1 + m2 * m2 + kC1) * (s11 + s22 + kC2));
  }
  return acc / static_cast<double>(mu1.size());
}

double ssim(const GrayImage& a, const GrayImage& b) {
  check_same_dims(a.h, a.w, b.h, b.w, "ssim");
  return ssim(a.pix.data(), b.pix.data(), a.h, a.w);
}

EvalReport eval_dataset(const DenoiseFn& denoise, const Dataset& ds, const EvalOptions& options) {
  if (ds.images.empty()) throw std::invalid_argument("eval: empty dataset");
  if (options.sigma < 0) throw std::invalid_argument("eval: sigma must be >= 0");
  EvalReport rep;
  rep.options = options;
  double acc_psnr = 0, acc_ssim = 0, acc_noisy = 0;
  int n_psnr = 0, n_noisy = 0;

  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const Tensor<float> clean = image_to_tensor(ds.images[i]);
    Tensor<float> noisy = clean;
    if (options.sigma > 0) {
      std::seed_seq sq{static_cast<std::uint32_t>(options.seed),
                       static_cast<std::uint32_t>(options.seed >> 32),
                       static_cast<std::uint32_t>(i)};
      std::mt19937 rng(sq);
      noisy = add_gaussian_noise(clean, options.sigma, rng);
    }
    Tensor<float> est = denoise(noisy);
    if (!(est.shape == noisy.shape)) {
      throw std::runtime_error("eval: denoiser returned " + est.shape.str() + " for input " +
                               noisy.shape.str());
    }
    EvalRow row;
    row.name = ds.names[i];
    row.psnr_noisy = psnr_from_mse(mse255(noisy.data.data(), clean.data.data(), clean.numel()));
    if (options.also_unclamped) {
      row.psnr_unclamped =
          psnr_from_mse(mse255(est.data.data(), clean.data.data(), clean.numel()));
    }
    Tensor<float> scored = est;
    if (options.clamp) {
      for (float& v : scored.data) v = std::clamp(v, 0.0f, 1.0f);
    }
    const double m = mse255(scored.data.data(), clean.data.data(), clean.numel());
    row.psnr = psnr_from_mse(m);
    row.ssim = ssim(scored.data.data(), clean.data.data(), clean.shape.h, clean.shape.w);
    row.infinite = m <= 0;
    if (row.infinite) {
      ++rep.excluded_from_mean;
    } else {
      acc_psnr += row.psnr;
      ++n_psnr;
    }
    acc_ssim += row.ssim;
    if (std::isfinite(row.psnr_noisy)) {
      acc_noisy += row.psnr_noisy;
      ++n_noisy;
    }
    rep.rows.push_back(std::move(row));
  }
  rep.mean_psnr = n_psnr > 0 ? acc_psnr / n_psnr : std::numeric_limits<double>::infinity();
  rep.mean_ssim = acc_ssim / static_cast<double>(rep.rows.size());
  rep.mean_psnr_noisy =
      n_noisy > 0 ? acc_noisy / n_noisy : std::numeric_limits<double>::infinity();
  return rep;
}

void EvalReport::write_lines(std::ostream& os) const {
  os << "sigma=" << options.sigma << " seed=" << options.seed << " clamp=" << (options.clamp ? 1 : 0)
     << "\n";
  for (const EvalRow& r : rows) {
    os << "image=" << r.name << " psnr_noisy=" << fmt(r.psnr_noisy) << " psnr=" << fmt(r.psnr)
       << " ssim=" << fmt(r.ssim);
    if (options.also_unclamped) os << " psnr_unclamped=" << fmt(r.psnr_unclamped);
    if (r.infinite) os << " exact=1";
    os << "\n";
  }
  os << "mean psnr_noisy=" << fmt(mean_psnr_noisy) << " psnr=" << fmt(mean_psnr)
     << " ssim=" << fmt(mean_ssim);
  if (excluded_from_mean > 0) os << " excluded=" << excluded_from_mean;
  os << "\n";
}

void EvalReport::write_table(std::ostream& os) const {
  std::size_t wname = 5;
  for (const EvalRow& r : rows) wname = std::max(wname, r.name.size());
  os << std::left << std::setw(static_cast<int>(wname) + 2) << "image" << std::right
     << std::setw(12) << "noisy dB" << std::setw(12) << "psnr dB" << std::setw(10) << "ssim";
  if (options.also_unclamped) os << std::setw(14) << "unclamped dB";
  os << "\n";
  for (const EvalRow& r : rows) {
    os << std::left << std::setw(static_cast<int>(wname) + 2) << r.name << std::right
       << std::setw(12) << fmt(r.psnr_noisy) << std::setw(12) << fmt(r.psnr) << std::setw(10)
       << fmt(r.ssim);
    if (options.also_unclamped) os << std::setw(14) << fmt(r.psnr_unclamped);
    if (r.infinite) os << "  (exact, excluded from mean)";
    os << "\n";
  }
  os << std::left << std::setw(static_cast<int>(wname) + 2) << "mean" << std::right << std::setw(12)
     << fmt(mean_psnr_noisy) << std::setw(12) << fmt(mean_psnr) << std::setw(10) << fmt(mean_ssim)
     << "\n";
}

BenchResult bench_forward(const DenoiseFn& denoise, const Dataset& ds, int reps, int warmup) {
  if (ds.images.empty()) throw std::invalid_argument("bench: empty dataset");
  if (reps < 2) throw std::invalid_argument("bench: need at least 2 repetitions");
  if (warmup < 0) throw std::invalid_argument("bench: warmup must be >= 0");
  std::vector<Tensor<float>> inputs;
  inputs.reserve(ds.images.size());
  for (const GrayImage& im : ds.images) inputs.push_back(image_to_tensor(im));

  using clock = std::chrono::steady_clock;
  volatile float guard = 0;  // keep the forward passes observable
  BenchResult res;
  for (int r = 0; r < warmup + reps; ++r) {
    const auto t0 = clock::now();
    for (const Tensor<float>& t : inputs) {
      Tensor<float> out = denoise(t);
      guard = guard + out.data[0];
    }
    const double sec = std::chrono::duration<double>(clock::now() - t0).count() /
                       static_cast<double>(inputs.size());
    if (r >= warmup) res.rep_seconds.push_back(sec);
  }
  double mean = 0;
  for (double s : res.rep_seconds) mean += s;
  mean /= static_cast<double>(res.rep_seconds.size());
  double var = 0;
  for (double s : res.rep_seconds) var += (s - mean) * (s - mean);
  var /= static_cast<double>(res.rep_seconds.size());
  res.mean = mean;
  res.cv = mean > 0 ? std::sqrt(var) / mean : 0;
  return res;
}

}  // namespace mwrdcnn
