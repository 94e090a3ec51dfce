#include "mwrdcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "mwrdcnn/blocks.hpp"
#include "mwrdcnn/network.hpp"

namespace mwrdcnn::gradcheck {
namespace {

constexpr double kH = 1e-5;

struct Acc {
  SuiteResult res;
  Acc(std::string name, double atol, double rtol) {
    res.name = std::move(name);
    res.atol = atol;
    res.rtol = rtol;
  }
  void note(double analytic, double fd) {
    const double diff = std::abs(analytic - fd);
    const double denom = res.atol + res.rtol * std::max(std::abs(analytic), std::abs(fd));
    res.worst_ratio = std::max(res.worst_ratio, diff / denom);
    res.max_abs_diff = std::max(res.max_abs_diff, diff);
    ++res.checked;
  }
  SuiteResult done() {
    res.pass = res.worst_ratio <= 1.0;
    return res;
  }
};

double fd(const std::function<double()>& f, double& x) {
  const double x0 = x;
  x = x0 + kH;
  const double fp = f();
  x = x0 - kH;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2 * kH);
}

template <typename It>
void fill_uniform(It begin, It end, std::mt19937& rng, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (It it = begin; it != end; ++it) *it = d(rng);
}

double weighted_sum(const Tensor<double>& y, const Tensor<double>& wts) {
  double s = 0;
  for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * wts.data[i];
  return s;
}

SuiteResult conv_suite(const std::string& name, Shape xs, int c_out, int k, int stride, int pad,
                       std::mt19937& rng) {
  Tensor<double> x(xs);
  fill_uniform(x.data.begin(), x.data.end(), rng, -1, 1);
  ConvFilter<double> f(c_out, xs.c, k, k);
  fill_uniform(f.weights.begin(), f.weights.end(), rng, -1, 1);
  fill_uniform(f.bias.begin(), f.bias.end(), rng, -1, 1);

  Tensor<double> wts(conv2d(x, f, stride, pad).shape);
  fill_uniform(wts.data.begin(), wts.data.end(), rng, -1, 1);
  const auto loss = [&] { return weighted_sum(conv2d(x, f, stride, pad), wts); };
  const ConvGrads<double> g = conv2d_backward(x, f, stride, pad, wts);

  Acc acc(name, 1e-9, 1e-6);
  for (std::size_t i = 0; i < x.data.size(); ++i) acc.note(g.x.data[i], fd(loss, x.data[i]));
  for (std::size_t i = 0; i < f.weights.size(); ++i) acc.note(g.weights[i], fd(loss, f.weights[i]));
  for (std::size_t i = 0; i < f.bias.size(); ++i) acc.note(g.bias[i], fd(loss, f.bias[i]));
  return acc.done();
}

SuiteResult iconv_suite(std::mt19937& rng) {
  Tensor<double> o(2, 3, 4, 4);
  fill_uniform(o.data.begin(), o.data.end(), rng, -1, 1);
  ConvFilter<double> f(3, 2, 2, 2);
  fill_uniform(f.weights.begin(), f.weights.end(), rng, -1, 1);
  const int stride = 2;

  Tensor<double> wts(iconv2d(o, f, stride).shape);
  fill_uniform(wts.data.begin(), wts.data.end(), rng, -1, 1);
  const auto loss = [&] { return weighted_sum(iconv2d(o, f, stride), wts); };

  Tensor<double> go(o.shape);
  std::vector<double> gw(f.weights.size(), 0.0);
  iconv2d_backward_acc(o, view_of(f), stride, wts, &go, gw.data());

  Acc acc("iconv2d_k2s2", 1e-9, 1e-6);
  for (std::size_t i = 0; i < o.data.size(); ++i) acc.note(go.data[i], fd(loss, o.data[i]));
  for (std::size_t i = 0; i < f.weights.size(); ++i) acc.note(gw[i], fd(loss, f.weights[i]));
  return acc.done();
}

SuiteResult relu_suite(std::mt19937& rng) {
  Tensor<double> x(2, 4, 8, 8);
  fill_uniform(x.data.begin(), x.data.end(), rng, -1, 1);
  // keep every entry away from the kink so central differences are clean
  for (double& e : x.data) {
    if (std::abs(e) < 0.05) e += e >= 0 ? 0.1 : -0.1;
  }
  Tensor<double> wts(x.shape);
  fill_uniform(wts.data.begin(), wts.data.end(), rng, -1, 1);
  const auto loss = [&] { return weighted_sum(relu(x), wts); };
  const Tensor<double> g = relu_backward(x, wts);

  Acc acc("relu", 1e-9, 1e-6);
  for (std::size_t i = 0; i < x.data.size(); ++i) acc.note(g.data[i], fd(loss, x.data[i]));
  return acc.done();
}

SuiteResult bn_suite(std::mt19937& rng) {
  Tensor<double> x(2, 3, 4, 4);
  fill_uniform(x.data.begin(), x.data.end(), rng, -1, 1);
  std::vector<double> gamma(3), beta(3);
  fill_uniform(gamma.begin(), gamma.end(), rng, 0.5, 1.5);
  fill_uniform(beta.begin(), beta.end(), rng, -0.5, 0.5);
  Tensor<double> wts(x.shape);
  fill_uniform(wts.data.begin(), wts.data.end(), rng, -1, 1);

  const auto loss = [&] {
    return weighted_sum(batch_norm<double>(x, gamma.data(), beta.data(), nullptr, nullptr,
                                           nullptr, Mode::kTrain, 1e-5, 0.1, nullptr),
                        wts);
  };
  BnCache<double> cache;
  batch_norm<double>(x, gamma.data(), beta.data(), nullptr, nullptr, nullptr, Mode::kTrain, 1e-5,
                     0.1, &cache);
  Tensor<double> gx(x.shape);
  std::vector<double> gg(3, 0.0), gb(3, 0.0);
  batch_norm_backward_acc(wts, gamma.data(), cache, &gx, gg.data(), gb.data());

  Acc acc("batch_norm", 1e-9, 1e-5);
  for (std::size_t i = 0; i < x.data.size(); ++i) acc.note(gx.data[i], fd(loss, x.data[i]));
  for (std::size_t i = 0; i < gamma.size(); ++i) acc.note(gg[i], fd(loss, gamma[i]));
  for (std::size_t i = 0; i < beta.size(); ++i) acc.note(gb[i], fd(loss, beta[i]));
  return acc.done();
}

SuiteResult rdb_suite(std::mt19937& rng) {
  RdbSpec spec;
  spec.channels = 4;
  spec.depth = 2;
  spec.bn = true;
  ResidualDenseBlock<double> rdb(spec, "g");
  ParamStore<double> ps;
  rdb.register_params(ps, rng);

  Tensor<double> x(1, 4, 8, 8);
  fill_uniform(x.data.begin(), x.data.end(), rng, -1, 1);
  Tensor<double> wts(x.shape);
  fill_uniform(wts.data.begin(), wts.data.end(), rng, -1, 1);

  const auto loss = [&] { return weighted_sum(rdb.forward(x, ps, Mode::kTrain), wts); };
  ps.zero_grads();
  rdb.forward(x, ps, Mode::kTrain);
  const Tensor<double> gx = rdb.backward(wts, ps);

  Acc acc("rdb_j2_c4", 1e-8, 1e-4);
  for (std::size_t i = 0; i < x.data.size(); ++i) acc.note(gx.data[i], fd(loss, x.data[i]));
  for (const std::string& name : ps.names()) {
    ParamEntry<double>& e = ps.at(name);
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      acc.note(e.value.grad[i], fd(loss, e.value.data[i]));
    }
  }
  return acc.done();
}

SuiteResult network_suite(std::uint64_t seed, std::mt19937& rng) {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.channels = {4, 8};
  cfg.rdb_depth = 2;
  cfg.bn_policy = BnPolicy::kDefault;
  Network<double> net(cfg);
  ParamStore<double> ps = build<double>(cfg, seed ^ 0x9e3779b9u);

  Tensor<double> x(2, 1, 16, 16), target(2, 1, 16, 16);
  fill_uniform(x.data.begin(), x.data.end(), rng, 0, 1);
  fill_uniform(target.data.begin(), target.data.end(), rng, 0, 1);

  const auto loss = [&] { return loss_l2(net.forward(x, ps, Mode::kTrain), target); };
  net.backward(x, target, ps);

  Acc acc("network_l2_full", 1e-8, 1e-3);
  for (const std::string& name : ps.names()) {
    ParamEntry<double>& e = ps.at(name);
    if (!e.trainable) continue;
    for (std::size_t i = 0; i < e.value.data.size(); ++i) {
      acc.note(e.value.grad[i], fd(loss, e.value.data[i]));
    }
  }
  return acc.done();
}

}  // namespace

std::vector<SuiteResult> run_all(std::uint64_t seed) {
  std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937 rng(sq);
  std::vector<SuiteResult> out;
  out.push_back(conv_suite("conv2d_k3s1p1", Shape{1, 2, 6, 6}, 3, 3, 1, 1, rng));
  out.push_back(conv_suite("conv2d_k2s2p0", Shape{2, 3, 8, 8}, 4, 2, 2, 0, rng));
  out.push_back(iconv_suite(rng));
  out.push_back(relu_suite(rng));
  out.push_back(bn_suite(rng));
  out.push_back(rdb_suite(rng));
  out.push_back(network_suite(seed, rng));
  return out;
}

bool all_pass(const std::vector<SuiteResult>& results) {
  for (const SuiteResult& r : results) {
    if (!r.pass) return false;
  }
  return !results.empty();
}

}  // namespace mwrdcnn::gradcheck
