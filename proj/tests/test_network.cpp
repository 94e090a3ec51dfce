#include <doctest.h>

#include <random>

#include "mwrdcnn/network.hpp"
#include "mwrdcnn/training.hpp"
#include "support/oracles.hpp"

using namespace mwrdcnn;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.channels = {4, 8};
  cfg.rdb_depth = 2;
  cfg.bn_policy = BnPolicy::kNone;
  return cfg;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("configuration validation names the failing field") {
  ModelConfig cfg;
  cfg.levels = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("levels"), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.channels = {32, 64};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("levels=3"), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.rdb_depth = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("rdb_depth"), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.channels = {32, 0, 128};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("level 2"), std::invalid_argument);
  CHECK_NOTHROW(ModelConfig{}.validate());
}

TEST_CASE("builds with one seed are bitwise identical") {
  ModelConfig cfg = tiny_cfg();
  ParamStore<float> a = build<float>(cfg, 99);
  ParamStore<float> b = build<float>(cfg, 99);
  ParamStore<float> c = build<float>(cfg, 100);
  REQUIRE(a.names() == b.names());
  bool any_differs_from_c = false;
  for (const std::string& n : a.names()) {
    CHECK(a.at(n).value.data == b.at(n).value.data);
    if (a.at(n).value.data != c.at(n).value.data) any_differs_from_c = true;
  }
  CHECK(any_differs_from_c);
}

TEST_CASE("parameter names and count follow the architecture") {
  ModelConfig cfg = tiny_cfg();
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 1);

  // down path level 1: conv block 4->4 plus a depth-2 dense block at width 4
  CHECK(ps.at("l1.down.cb.w").value.shape == Shape{4, 4, 3, 3});
  CHECK(ps.at("l1.down.rdb.cb1.w").value.shape == Shape{4, 4, 3, 3});
  CHECK(ps.at("l1.down.rdb.cb2.w").value.shape == Shape{4, 8, 3, 3});
  CHECK(ps.at("l1.down.rdb.fuse.w").value.shape == Shape{4, 12, 3, 3});
  // level 2 consumes the four subbands of a 4-wide map
  CHECK(ps.at("l2.down.cb.w").value.shape == Shape{8, 16, 3, 3});
  // top turn: expand back to 4 * width(1) for the inverse transform
  CHECK(ps.at("l2.up.cb.w").value.shape == Shape{16, 8, 3, 3});
  // level-1 up conv block maps width 4 to the four single-channel subbands
  CHECK(ps.at("l1.up.cb.w").value.shape == Shape{4, 4, 3, 3});
  CHECK(ps.at("l1.up.rdb.cb1.w").value.shape == Shape{4, 4, 3, 3});

  // bn disabled: no .bn. entries at all
  for (const std::string& n : ps.names()) CHECK(n.find(".bn.") == std::string::npos);

  // independent arithmetic for the same architecture
  auto conv_scalars = [](int co, int ci) { return co * ci * 9 + co; };
  std::size_t want = 0;
  want += conv_scalars(4, 4);                                        // l1 down cb
  want += conv_scalars(4, 4) + conv_scalars(4, 8) + conv_scalars(4, 12);  // l1 down rdb
  want += conv_scalars(8, 16);                                       // l2 down cb
  want += conv_scalars(8, 8) + conv_scalars(8, 16) + conv_scalars(8, 24);  // l2 down rdb
  want += conv_scalars(16, 8);                                       // l2 up cb
  want += conv_scalars(4, 4) + conv_scalars(4, 8) + conv_scalars(4, 12);  // l1 up rdb
  want += conv_scalars(4, 4);                                        // l1 up cb
  CHECK(ps.scalar_count(true) == want);
  CHECK(ps.scalar_count(false) == want);
}

TEST_CASE("the default policy skips bn on the outermost blocks") {
  ModelConfig cfg;
  cfg.levels = 2;
  cfg.channels = {4, 8};
  cfg.rdb_depth = 2;
  cfg.bn_policy = BnPolicy::kDefault;
  ParamStore<float> ps = build<float>(cfg, 1);
  CHECK(!ps.has("l1.down.cb.bn.g"));   // first block sees raw input
  CHECK(ps.has("l2.down.cb.bn.g"));
  CHECK(ps.has("l2.up.cb.bn.g"));
  CHECK(!ps.has("l1.up.cb.bn.g"));     // final block emits the image
  CHECK(ps.has("l1.down.rdb.cb1.bn.g"));
  CHECK(!ps.has("l1.down.rdb.fuse.bn.g"));  // fusion conv never carries bn
}

TEST_CASE("forward preserves shape and is deterministic") {
  ModelConfig cfg;
  cfg.levels = 3;
  cfg.channels = {4, 6, 8};
  cfg.rdb_depth = 2;
  cfg.bn_policy = BnPolicy::kNone;
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 5);
  Tensor<float> x(2, 1, 16, 24);
  std::mt19937 rng(2);
  oracle::fill_uniform(x, rng, 0.0f, 1.0f);
  Tensor<float> y1 = net.forward(x, ps, Mode::kInfer);
  Tensor<float> y2 = net.forward(x, ps, Mode::kInfer);
  CHECK(y1.shape == x.shape);
  CHECK(y1.data == y2.data);
}

TEST_CASE("a single-level network assembles and runs") {
  ModelConfig cfg;
  cfg.levels = 1;
  cfg.channels = {8};
  cfg.rdb_depth = 2;
  cfg.bn_policy = BnPolicy::kNone;
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 3);
  Tensor<float> x(2, 1, 8, 8);
  std::mt19937 rng(4);
  oracle::fill_uniform(x, rng, 0.0f, 1.0f);
  CHECK(net.forward(x, ps, Mode::kInfer).shape == x.shape);
  auto counts = net.conv_block_counts();
  REQUIRE(counts.size() == 1);
  CHECK(counts[0].down == 3);  // conv block + depth-2 dense block
  CHECK(counts[0].up == 1);    // the lone output conv
}

TEST_CASE("conv block counts match the level layout") {
  ModelConfig cfg;
  cfg.levels = 3;
  cfg.channels = {8, 8, 8};
  cfg.rdb_depth = 3;
  Network<float> net(cfg);
  auto counts = net.conv_block_counts();
  REQUIRE(counts.size() == 3);
  CHECK(counts[0].down == 4);
  CHECK(counts[0].up == 4);
  CHECK(counts[1].down == 4);
  CHECK(counts[1].up == 4);
  CHECK(counts[2].down == 4);
  CHECK(counts[2].up == 1);  // 4 + 1 = five conv blocks on the innermost level
}

TEST_CASE("inputs off the transform grid are rejected") {
  ModelConfig cfg;  // 3 levels -> multiples of 8
  cfg.bn_policy = BnPolicy::kNone;
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 1);
  Tensor<float> bad(1, 1, 66, 64);
  CHECK_THROWS_WITH_AS(net.forward(bad, ps, Mode::kInfer), doctest::Contains("pad_to_grid"),
                       std::invalid_argument);
  Tensor<float> two_ch(1, 2, 64, 64);
  CHECK_THROWS_WITH_AS(net.forward(two_ch, ps, Mode::kInfer),
                       doctest::Contains("single-channel"), std::invalid_argument);
}

TEST_CASE("zero parameters give a zero output") {
  ModelConfig cfg = tiny_cfg();
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 9);
  for (const std::string& n : ps.names()) ps.at(n).value.fill(0.0f);
  Tensor<float> x(1, 1, 8, 8);
  std::mt19937 rng(6);
  oracle::fill_uniform(x, rng, 0.0f, 1.0f);
  Tensor<float> y = net.forward(x, ps, Mode::kInfer);
  for (float v : y.data) CHECK(v == 0.0f);
}

TEST_CASE("loss follows the half-mean-squared convention") {
  Tensor<double> pred(2, 1, 2, 2), target(2, 1, 2, 2);
  pred.fill(1.0);
  target.fill(0.0);
  // per sample ||diff||^2 = 4, two samples: (4 + 4) / (2 * 2) = 2
  CHECK(loss_l2(pred, target) == doctest::Approx(2.0).epsilon(1e-15));

  std::mt19937 rng(3);
  oracle::fill_uniform(pred, rng);
  oracle::fill_uniform(target, rng);
  Tensor<double> g = loss_l2_grad(pred, target);
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    CHECK(g.data[i] == doctest::Approx((pred.data[i] - target.data[i]) / 2.0).epsilon(1e-15));
  }

  // duplicating the batch leaves the loss alone and halves each gradient entry
  Tensor<double> pred2(2, 1, 1, 1), target2(2, 1, 1, 1);
  pred2.data = {0.5, 0.5};
  target2.data = {0.1, 0.1};
  Tensor<double> pred1(1, 1, 1, 1), target1(1, 1, 1, 1);
  pred1.data = {0.5};
  target1.data = {0.1};
  CHECK(loss_l2(pred2, target2) == doctest::Approx(loss_l2(pred1, target1)).epsilon(1e-15));
  CHECK(loss_l2_grad(pred2, target2).data[0] ==
        doctest::Approx(loss_l2_grad(pred1, target1).data[0] / 2.0).epsilon(1e-15));

  Tensor<double> wrong(1, 1, 2, 2);
  CHECK_THROWS_AS(loss_l2(pred, wrong), std::invalid_argument);
}

TEST_CASE("backward fills every trainable gradient and reports the loss") {
  ModelConfig cfg = tiny_cfg();
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 21);
  Tensor<float> x(2, 1, 8, 8), t(2, 1, 8, 8);
  std::mt19937 rng(22);
  oracle::fill_uniform(x, rng, 0.0f, 1.0f);
  oracle::fill_uniform(t, rng, 0.0f, 1.0f);

  const float loss = net.backward(x, t, ps);
  CHECK(loss > 0.0f);

  std::size_t nonzero = 0, total = 0;
  for (const std::string& n : ps.names()) {
    auto& e = ps.at(n);
    if (!e.trainable) continue;
    REQUIRE(e.value.has_grad());
    for (float g : e.value.grad) {
      ++total;
      if (g != 0.0f) ++nonzero;
    }
  }
  CHECK(total > 0);
  CHECK(nonzero > total / 2);  // dead gradients would point at a wiring bug

  // perfect prediction: loss 0, all gradients exactly 0
  Tensor<float> y = net.forward(x, ps, Mode::kTrain);
  const float zero_loss = net.backward(x, y, ps);
  CHECK(zero_loss == 0.0f);
  auto stats = ps.grad_stats();
  CHECK(stats.max_abs == 0.0f);
}

TEST_CASE("both the deep path and the level skips carry signal") {
  ModelConfig cfg = tiny_cfg();
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 31);
  Tensor<float> x(1, 1, 8, 8);
  std::mt19937 rng(32);
  oracle::fill_uniform(x, rng, 0.0f, 1.0f);
  Tensor<float> base = net.forward(x, ps, Mode::kInfer);

  ParamStore<float> deep = build<float>(cfg, 31);
  deep.at("l2.down.cb.w").value.data[0] += 0.5f;
  CHECK(oracle::max_abs_diff(net.forward(x, deep, Mode::kInfer), base) > 0.0f);

  ParamStore<float> skip = build<float>(cfg, 31);
  skip.at("l1.down.rdb.fuse.w").value.data[0] += 0.5f;
  CHECK(oracle::max_abs_diff(net.forward(x, skip, Mode::kInfer), base) > 0.0f);
}

TEST_CASE("one optimizer step on a fixed batch reduces the loss") {
  ModelConfig cfg = tiny_cfg();
  Network<float> net(cfg);
  ParamStore<float> ps = build<float>(cfg, 55);
  Tensor<float> x(2, 1, 16, 16), t(2, 1, 16, 16);
  std::mt19937 rng(56);
  oracle::fill_uniform(x, rng, 0.0f, 1.0f);
  oracle::fill_uniform(t, rng, 0.0f, 1.0f);

  const float loss0 = net.backward(x, t, ps);
  adam_step(ps, 1e-3, 1);
  const float loss1 = net.backward(x, t, ps);
  CHECK(loss1 < loss0);
}

TEST_CASE("padding reflects up to the grid and cropping inverts it") {
  Tensor<float> x(1, 1, 65, 65);
  for (int y = 0; y < 65; ++y)
    for (int xx = 0; xx < 65; ++xx) x.at(0, 0, y, xx) = static_cast<float>(y * 100 + xx);

  auto [padded, rec] = pad_to_grid(x, 3);
  CHECK(padded.shape == Shape{1, 1, 72, 72});
  CHECK(rec.h == 65);
  CHECK(rec.w == 65);
  // interior is untouched
  for (int y = 0; y < 65; ++y)
    for (int xx = 0; xx < 65; ++xx) CHECK(padded.at(0, 0, y, xx) == x.at(0, 0, y, xx));
  // reflection with period 2n-2: column 65 mirrors column 63, row 66 mirrors row 62
  CHECK(padded.at(0, 0, 0, 65) == x.at(0, 0, 0, 63));
  CHECK(padded.at(0, 0, 0, 66) == x.at(0, 0, 0, 62));
  CHECK(padded.at(0, 0, 66, 0) == x.at(0, 0, 62, 0));
  CHECK(padded.at(0, 0, 71, 71) == x.at(0, 0, 57, 57));

  Tensor<float> back = crop_back(padded, rec);
  CHECK(back.shape == x.shape);
  CHECK(oracle::max_abs_diff(back, x) == 0.0f);

  // aligned input passes through unchanged
  Tensor<float> ok(1, 1, 64, 64);
  ok.fill(0.5f);
  auto [same, rec2] = pad_to_grid(ok, 3);
  CHECK(same.shape == ok.shape);
  CHECK(crop_back(same, rec2).shape == ok.shape);
}

}  // TEST_SUITE
