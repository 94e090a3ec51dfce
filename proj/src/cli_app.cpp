#include "mwrdcnn/cli_app.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "mwrdcnn/checkpoint.hpp"
#include "mwrdcnn/gradcheck.hpp"
#include "mwrdcnn/image_io.hpp"
#include "mwrdcnn/metrics.hpp"
#include "mwrdcnn/network.hpp"
#include "mwrdcnn/training.hpp"

namespace mwrdcnn {
namespace {

struct ModelFlags {
  int levels = 3;
  std::vector<int> channels = {32, 64, 128};
  int rdb_depth = 3;
  std::string bn = "default";

  ModelConfig to_config() const {
    ModelConfig c;
    c.levels = levels;
    c.channels = channels;
    c.rdb_depth = rdb_depth;
    if (bn == "default") {
      c.bn_policy = BnPolicy::kDefault;
    } else if (bn == "none") {
      c.bn_policy = BnPolicy::kNone;
    } else {
      throw std::invalid_argument("--bn must be 'default' or 'none', got '" + bn + "'");
    }
    return c;
  }
};

void add_model_flags(CLI::App* cmd, ModelFlags& mf) {
  cmd->add_option("--levels", mf.levels, "transform levels")->capture_default_str();
  cmd->add_option("--channels", mf.channels, "feature widths per level, outermost first")
      ->delimiter(',')
      ->capture_default_str();
  cmd->add_option("--rdb-depth", mf.rdb_depth, "conv blocks inside each dense block")
      ->capture_default_str();
  cmd->add_option("--bn", mf.bn, "batch norm policy: default|none")->capture_default_str();
}

bool model_flags_given(const CLI::App* cmd) {
  return cmd->count("--levels") > 0 || cmd->count("--channels") > 0 ||
         cmd->count("--rdb-depth") > 0 || cmd->count("--bn") > 0;
}

struct TrainArgs {
  std::string data, out, val_data, resume;
  ModelFlags model;
  TrainConfig tc;
  std::vector<int> stage_epochs = {15, 20, 10};
  std::vector<double> stage_lg_start = {-3.0, -3.8, -4.5};
  std::vector<double> stage_lg_end = {-3.0, -4.0, -5.0};
  int log_every = 1;
};

int cmd_train(TrainArgs& a, const CLI::App* cmd) {
  if (a.stage_epochs.size() != a.stage_lg_start.size() ||
      a.stage_epochs.size() != a.stage_lg_end.size()) {
    throw std::invalid_argument(
        "--stage-epochs, --stage-lg-start and --stage-lg-end must have the same length");
  }
  a.tc.stages.clear();
  for (std::size_t i = 0; i < a.stage_epochs.size(); ++i) {
    a.tc.stages.push_back({a.stage_epochs[i], a.stage_lg_start[i], a.stage_lg_end[i]});
  }

  ModelConfig cfg = a.model.to_config();
  ParamStore<float> ps;
  TrainProgress progress;
  bool resuming = false;
  if (!a.resume.empty()) {
    const Checkpoint cp = load_checkpoint(a.resume);
    if (model_flags_given(cmd)) {
      const std::string diff = config_diff(cfg, cp.config);
      if (!diff.empty()) {
        throw std::runtime_error("model flags conflict with the resumed checkpoint: " + diff);
      }
    }
    cfg = cp.config;
    ps = restore_params(cp);
    progress = TrainProgress{cp.epoch, cp.step, cp.rng_state};
    resuming = true;
    std::cout << "resuming from " << a.resume << " at step " << cp.step << "\n";
  } else {
    cfg.validate();
    ps = build<float>(cfg, a.tc.seed);
  }
  Network<float> net(cfg);

  const Dataset train_ds = load_dataset(a.data, a.tc.patch, &std::cerr);
  Dataset val_ds;
  if (!a.val_data.empty()) val_ds = load_dataset(a.val_data, 1, &std::cerr);

  const int log_every = std::max(1, a.log_every);
  TrainSinks sinks;
  sinks.on_step = [&](const StepRecord& r) {
    if (r.step % static_cast<std::uint64_t>(log_every) == 0) {
      std::cout << "step=" << r.step << " epoch=" << r.epoch << " lr=" << r.lr
                << " loss=" << r.loss << "\n";
    }
    return true;
  };
  sinks.on_epoch = [&](const EpochRecord& r) {
    std::cout << "epoch=" << r.epoch << " val_psnr=" << r.val_psnr << "\n";
  };
  sinks.on_checkpoint = [&](const TrainProgress& p) {
    save_checkpoint(a.out, make_checkpoint(cfg, ps, p));
    std::cout << "checkpoint=" << a.out << " step=" << p.step << " epoch=" << p.epoch << std::endl;
  };

  const TrainResult res = train(net, ps, a.tc, train_ds, val_ds.images.empty() ? nullptr : &val_ds,
                                sinks, resuming ? &progress : nullptr);
  std::cout << "done steps=" << res.steps_run << " first_loss=" << res.first_loss
            << " last_loss=" << res.last_loss << "\n";
  return 0;
}

struct DenoiseArgs {
  std::string checkpoint, input, output;
  std::uint64_t seed = 0;
};

int cmd_denoise(const DenoiseArgs& a) {
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  ParamStore<float> ps = restore_params(cp);
  Network<float> net(cp.config);
  const GrayImage img = load_image(a.input);
  const Tensor<float> x = image_to_tensor(img);
  auto [padded, rec] = pad_to_grid(x, cp.config.levels);
  const Tensor<float> y = crop_back(net.forward(padded, ps, Mode::kInfer), rec);
  save_image(a.output, tensor_to_image(y, /*clamp=*/true));
  std::cout << "wrote " << a.output << " (" << img.w << "x" << img.h << ")\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, data, report;
  double sigma = 25.0;
  std::uint64_t seed = 0;
  bool unclamped = false;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  ParamStore<float> ps = restore_params(cp);
  Network<float> net(cp.config);
  const Dataset ds = load_dataset(a.data, 11, &std::cerr);  // SSIM window floor
  EvalOptions opt;
  opt.sigma = a.sigma;
  opt.seed = a.seed;
  opt.also_unclamped = a.unclamped;
  const EvalReport rep = eval_dataset(make_network_denoiser(net, ps), ds, opt);
  rep.write_table(std::cout);
  if (!a.report.empty()) {
    std::ofstream f(a.report, std::ios::trunc);
    if (!f) throw std::runtime_error(a.report + ": cannot open for writing");
    rep.write_lines(f);
    if (!f) throw std::runtime_error(a.report + ": write failed");
  }
  return 0;
}

struct BenchArgs {
  std::string checkpoint, data;
  int reps = 10;
  int warmup = 2;
  std::uint64_t seed = 0;
};

int cmd_bench(const BenchArgs& a) {
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  ParamStore<float> ps = restore_params(cp);
  Network<float> net(cp.config);
  const Dataset ds = load_dataset(a.data, 1, &std::cerr);
  const BenchResult r = bench_forward(make_network_denoiser(net, ps), ds, a.reps, a.warmup);
  for (std::size_t i = 0; i < r.rep_seconds.size(); ++i) {
    std::cout << "rep=" << i + 1 << " seconds_per_image=" << r.rep_seconds[i] << "\n";
  }
  std::cout << "mean_seconds_per_image=" << r.mean << " cv=" << r.cv << "\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const std::vector<gradcheck::SuiteResult> results = gradcheck::run_all(seed);
  for (const gradcheck::SuiteResult& r : results) {
    std::cout << "suite=" << r.name << " checked=" << r.checked << " worst_ratio=" << r.worst_ratio
              << " max_abs_diff=" << r.max_abs_diff << " atol=" << r.atol << " rtol=" << r.rtol
              << " " << (r.pass ? "PASS" : "FAIL") << "\n";
  }
  return gradcheck::all_pass(results) ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"multi-wavelet residual dense CNN grayscale denoiser"};
  app.require_subcommand(1);
  // one config flag for every subcommand; keys live under a [subcommand] section
  app.set_config("--config", "", "read options from a key=value file with a [subcommand] section");
  app.fallthrough();  // lets --config appear after the subcommand name

  TrainArgs ta;
  CLI::App* train_cmd = app.add_subcommand("train", "train a denoiser on a folder of clean images");
  train_cmd->add_option("--data", ta.data, "directory of clean training images (.pgm/.png)")
      ->required();
  train_cmd->add_option("--out", ta.out, "checkpoint output path")->required();
  train_cmd->add_option("--val-data", ta.val_data, "directory of validation images");
  train_cmd->add_option("--resume", ta.resume, "checkpoint to resume from");
  train_cmd->add_option("--sigma", ta.tc.sigma, "noise level on the 0..255 scale")
      ->capture_default_str();
  train_cmd->add_option("--patch", ta.tc.patch, "training patch size")->capture_default_str();
  train_cmd->add_option("--batch", ta.tc.batch, "patches per step")->capture_default_str();
  train_cmd->add_option("--seed", ta.tc.seed, "seed for init, sampling and noise")
      ->capture_default_str();
  train_cmd->add_option("--steps-per-epoch", ta.tc.steps_per_epoch,
                        "override the derived epoch length (0 = derive from the dataset)")
      ->capture_default_str();
  train_cmd->add_option("--max-steps", ta.tc.max_steps, "hard cap on optimizer steps (0 = none)")
      ->capture_default_str();
  train_cmd->add_option("--checkpoint-every", ta.tc.checkpoint_every,
                        "epochs between checkpoint writes")
      ->capture_default_str();
  train_cmd->add_option("--val-images", ta.tc.val_images,
                        "images probed for the per-epoch validation PSNR")
      ->capture_default_str();
  train_cmd->add_option("--stage-epochs", ta.stage_epochs, "length of each schedule stage")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--stage-lg-start", ta.stage_lg_start,
                        "log10 learning rate at each stage start")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--stage-lg-end", ta.stage_lg_end, "log10 learning rate at each stage end")
      ->delimiter(',')
      ->capture_default_str();
  train_cmd->add_option("--log-every", ta.log_every, "steps between progress lines")
      ->capture_default_str();
  add_model_flags(train_cmd, ta.model);

  DenoiseArgs da;
  CLI::App* denoise_cmd = app.add_subcommand("denoise", "denoise a single image");
  denoise_cmd->add_option("--checkpoint", da.checkpoint, "trained checkpoint")->required();
  denoise_cmd->add_option("--input", da.input, "noisy input image (.pgm/.png)")->required();
  denoise_cmd->add_option("--output", da.output, "output image path")->required();
  denoise_cmd->add_option("--seed", da.seed, "unused; accepted for interface symmetry")
      ->capture_default_str();

  EvalArgs ea;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score a checkpoint on a folder under synthetic noise");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "trained checkpoint")->required();
  eval_cmd->add_option("--data", ea.data, "directory of clean test images")->required();
  eval_cmd->add_option("--sigma", ea.sigma, "noise level on the 0..255 scale")
      ->capture_default_str();
  eval_cmd->add_option("--seed", ea.seed, "per-image noise seed base")->capture_default_str();
  eval_cmd->add_option("--report", ea.report, "also write a key=value report file");
  eval_cmd->add_flag("--unclamped", ea.unclamped, "additionally report unclamped PSNR");

  BenchArgs ba;
  CLI::App* bench_cmd = app.add_subcommand("bench", "time the forward pass over a folder");
  bench_cmd->add_option("--checkpoint", ba.checkpoint, "trained checkpoint")->required();
  bench_cmd->add_option("--data", ba.data, "directory of images")->required();
  bench_cmd->add_option("--reps", ba.reps, "timed repetitions")->capture_default_str();
  bench_cmd->add_option("--warmup", ba.warmup, "untimed repetitions")->capture_default_str();
  bench_cmd->add_option("--seed", ba.seed, "unused; accepted for interface symmetry")
      ->capture_default_str();

  std::uint64_t gc_seed = 1234;
  CLI::App* gc_cmd =
      app.add_subcommand("gradcheck", "finite-difference audit of every backward pass");
  gc_cmd->add_option("--seed", gc_seed, "seed for the random probes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (train_cmd->parsed()) return cmd_train(ta, train_cmd);
    if (denoise_cmd->parsed()) return cmd_denoise(da);
    if (eval_cmd->parsed()) return cmd_eval(ea);
    if (bench_cmd->parsed()) return cmd_bench(ba);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace mwrdcnn
