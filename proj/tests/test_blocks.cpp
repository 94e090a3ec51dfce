#include <doctest.h>

#include <random>

#include "mwrdcnn/blocks.hpp"
#include "support/oracles.hpp"

using namespace mwrdcnn;

namespace {

template <typename T>
ParamStore<T> registered(const ConvBlock<T>& cb, std::uint32_t seed) {
  ParamStore<T> ps;
  std::mt19937 rng(seed);
  cb.register_params(ps, rng);
  return ps;
}

}  // namespace

TEST_SUITE("blocks") {

TEST_CASE("a conv block preserves spatial size and maps channel width") {
  ConvBlock<float> cb({4, 9, true, true}, "t");
  ParamStore<float> ps = registered(cb, 3);
  Tensor<float> x(2, 4, 5, 7);
  std::mt19937 rng(8);
  oracle::fill_uniform(x, rng);
  Tensor<float> y = cb.forward(x, ps, Mode::kTrain);
  CHECK(y.shape == Shape{2, 9, 5, 7});
}

TEST_CASE("parameter registration is ordered and reproducible") {
  ConvBlock<float> cb({3, 5, true, true}, "blk");
  ParamStore<float> a = registered(cb, 42);
  ParamStore<float> b = registered(cb, 42);
  ParamStore<float> c = registered(cb, 43);

  const std::vector<std::string> want = {"blk.w",      "blk.b",       "blk.bn.g",
                                         "blk.bn.b",   "blk.bn.mean", "blk.bn.var",
                                         "blk.bn.count"};
  CHECK(a.names() == want);
  CHECK(a.at("blk.w").value.shape == Shape{5, 3, 3, 3});
  CHECK(a.at("blk.w").trainable);
  CHECK(!a.at("blk.bn.mean").trainable);
  CHECK(a.at("blk.bn.var").value.data[0] == 1.0f);
  CHECK(a.at("blk.bn.count").value.data[0] == 0.0f);
  for (float g : a.at("blk.bn.g").value.data) CHECK(g == 1.0f);
  for (float v : a.at("blk.b").value.data) CHECK(v == 0.0f);

  CHECK(a.at("blk.w").value.data == b.at("blk.w").value.data);  // same seed, same draw
  CHECK(a.at("blk.w").value.data != c.at("blk.w").value.data);

  // trainable entries carry Adam moments from birth
  CHECK(a.at("blk.w").m.data.size() == a.at("blk.w").value.data.size());
  CHECK(a.at("blk.bn.mean").m.data.empty());
}

TEST_CASE("a bn-free block with an identity kernel is a pass-through") {
  ConvBlock<float> cb({1, 1, false, false}, "id");
  ParamStore<float> ps = registered(cb, 7);
  auto& w = ps.at("id.w").value;
  w.fill(0.0f);
  w.at(0, 0, 1, 1) = 1.0f;  // center tap only
  ps.at("id.b").value.fill(0.0f);

  Tensor<float> x(1, 1, 6, 6);
  std::mt19937 rng(5);
  oracle::fill_uniform(x, rng);
  Tensor<float> y = cb.forward(x, ps, Mode::kInfer);
  CHECK(oracle::max_abs_diff(y, x) == 0.0f);
}

TEST_CASE("relu inside the block clips negative responses") {
  ConvBlock<float> cb({1, 1, false, true}, "r");
  ParamStore<float> ps = registered(cb, 1);
  ps.at("r.w").value.fill(0.0f);
  ps.at("r.b").value.data[0] = -3.0f;  // conv output is the negative bias everywhere
  Tensor<float> x(1, 1, 4, 4);
  x.fill(1.0f);
  Tensor<float> y = cb.forward(x, ps, Mode::kInfer);
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("block backward demands a preceding train-mode forward") {
  ConvBlock<float> cb({2, 2, false, true}, "g");
  ParamStore<float> ps = registered(cb, 2);
  Tensor<float> g(1, 2, 4, 4);
  g.fill(1.0f);
  CHECK_THROWS_WITH_AS(cb.backward(g, ps), doctest::Contains("train-mode forward"),
                       std::runtime_error);
  Tensor<float> x(1, 2, 4, 4);
  x.fill(0.5f);
  cb.forward(x, ps, Mode::kTrain);
  CHECK_NOTHROW(cb.backward(g, ps));
  // the saved activations are consumed by the backward pass
  CHECK_THROWS_AS(cb.backward(g, ps), std::runtime_error);
}

TEST_CASE("conv block backward matches finite differences") {
  // bn on, relu off: the composition is smooth, so central differences are clean
  ConvBlock<double> cb({3, 2, true, false}, "fd");
  ParamStore<double> ps;
  std::mt19937 rng(99);
  cb.register_params(ps, rng);

  Tensor<double> x(2, 3, 5, 5);
  oracle::fill_uniform(x, rng);
  Tensor<double> y0 = cb.forward(x, ps, Mode::kTrain);
  Tensor<double> wts(y0.shape);  // random weighting of the output -> scalar loss
  oracle::fill_uniform(wts, rng);

  auto value = [&]() {
    Tensor<double> y = cb.forward(x, ps, Mode::kTrain);
    return oracle::dot(y, wts);
  };

  ps.zero_grads();
  cb.forward(x, ps, Mode::kTrain);
  cb.backward(wts, ps);

  const double h = 1e-6;
  for (const std::string& name : {std::string("fd.w"), std::string("fd.b"), std::string("fd.bn.g"),
                                  std::string("fd.bn.b")}) {
    auto& e = ps.at(name);
    REQUIRE(e.value.has_grad());
    for (std::size_t i = 0; i < e.value.data.size(); i += 5) {
      const double keep = e.value.data[i];
      e.value.data[i] = keep + h;
      const double fp = value();
      e.value.data[i] = keep - h;
      const double fm = value();
      e.value.data[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      CHECK(e.value.grad[i] == doctest::Approx(fd).epsilon(5e-5));
    }
  }
}

TEST_CASE("a dense block with zero parameters is the identity") {
  ResidualDenseBlock<float> rdb({6, 3, false}, "z");
  ParamStore<float> ps;
  std::mt19937 rng(1);
  rdb.register_params(ps, rng);
  for (const std::string& n : ps.names()) ps.at(n).value.fill(0.0f);

  Tensor<float> x(1, 6, 8, 8);
  oracle::fill_uniform(x, rng);
  Tensor<float> y = rdb.forward(x, ps, Mode::kInfer);
  CHECK(oracle::max_abs_diff(y, x) == 0.0f);  // shortcut add survives untouched
}

TEST_CASE("dense block channel algebra") {
  ResidualDenseBlock<float> rdb({6, 3, false}, "d");
  CHECK(rdb.pre_fusion_channels() == 24);  // (depth + 1) * channels
  CHECK(rdb.conv_block_count() == 3);
  ParamStore<float> ps;
  std::mt19937 rng(4);
  rdb.register_params(ps, rng);
  // block t consumes (t+1)*c channels and emits c
  CHECK(ps.at("d.cb1.w").value.shape == Shape{6, 6, 3, 3});
  CHECK(ps.at("d.cb2.w").value.shape == Shape{6, 12, 3, 3});
  CHECK(ps.at("d.cb3.w").value.shape == Shape{6, 18, 3, 3});
  CHECK(ps.at("d.fuse.w").value.shape == Shape{6, 24, 3, 3});

  Tensor<float> x(2, 6, 8, 8);
  oracle::fill_uniform(x, rng);
  CHECK(rdb.forward(x, ps, Mode::kInfer).shape == x.shape);

  Tensor<float> bad(1, 5, 8, 8);
  CHECK_THROWS_AS(rdb.forward(bad, ps, Mode::kInfer), std::invalid_argument);
}

TEST_CASE("dense block backward matches finite differences") {
  ResidualDenseBlock<double> rdb({4, 2, false}, "fd");
  ParamStore<double> ps;
  std::mt19937 rng(11);
  rdb.register_params(ps, rng);
  // shrink the weights so every relu input is comfortably off its kink
  for (const std::string& n : ps.names()) {
    for (double& v : ps.at(n).value.data) v *= 0.5;
  }

  Tensor<double> x(1, 4, 6, 6);
  oracle::fill_uniform(x, rng, 0.25, 1.0);
  Tensor<double> y0 = rdb.forward(x, ps, Mode::kTrain);
  Tensor<double> wts(y0.shape);
  oracle::fill_uniform(wts, rng);

  auto value = [&]() { return oracle::dot(rdb.forward(x, ps, Mode::kTrain), wts); };

  ps.zero_grads();
  rdb.forward(x, ps, Mode::kTrain);
  Tensor<double> gin = rdb.backward(wts, ps);
  CHECK(gin.shape == x.shape);

  const double h = 1e-6;
  for (const std::string& name : ps.names()) {
    auto& e = ps.at(name);
    REQUIRE(e.value.has_grad());
    for (std::size_t i = 0; i < e.value.data.size(); i += 23) {
      const double keep = e.value.data[i];
      e.value.data[i] = keep + h;
      const double fp = value();
      e.value.data[i] = keep - h;
      const double fm = value();
      e.value.data[i] = keep;
      CHECK(e.value.grad[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
    }
  }

  // input gradient, same scheme
  for (std::size_t i = 0; i < x.data.size(); i += 37) {
    const double keep = x.data[i];
    x.data[i] = keep + h;
    const double fp = value();
    x.data[i] = keep - h;
    const double fm = value();
    x.data[i] = keep;
    CHECK(gin.data[i] == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
  }
}

}  // TEST_SUITE
