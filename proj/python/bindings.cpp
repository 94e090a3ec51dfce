#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <random>

#include "mwrdcnn/checkpoint.hpp"
#include "mwrdcnn/image_io.hpp"
#include "mwrdcnn/metrics.hpp"
#include "mwrdcnn/network.hpp"
#include "mwrdcnn/training.hpp"
#include "mwrdcnn/wavelet.hpp"

namespace py = pybind11;
using namespace mwrdcnn;

namespace {

using Arr = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor<float> tensor_from(const Arr& a) {
  const py::buffer_info info = a.request();
  Tensor<float> t = [&] {
    if (info.ndim == 2) {
      return Tensor<float>(1, 1, static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]));
    }
    if (info.ndim == 4) {
      return Tensor<float>(static_cast<int>(info.shape[0]), static_cast<int>(info.shape[1]),
                           static_cast<int>(info.shape[2]), static_cast<int>(info.shape[3]));
    }
    throw std::invalid_argument("expected a 2-D (h, w) or 4-D (n, c, h, w) float array");
  }();
  std::memcpy(t.data.data(), info.ptr, t.numel() * sizeof(float));
  return t;
}

py::array_t<float> array4_from(const Tensor<float>& t) {
  py::array_t<float> out({t.shape.n, t.shape.c, t.shape.h, t.shape.w});
  std::memcpy(out.mutable_data(), t.data.data(), t.numel() * sizeof(float));
  return out;
}

py::array_t<float> array2_from(const Tensor<float>& t) {
  py::array_t<float> out({t.shape.h, t.shape.w});
  std::memcpy(out.mutable_data(), t.data.data(), t.numel() * sizeof(float));
  return out;
}

// output rank mirrors input rank for image-like ops
py::array_t<float> array_like(const Tensor<float>& t, const Arr& like) {
  return like.request().ndim == 2 && t.shape.n == 1 && t.shape.c == 1 ? array2_from(t)
                                                                      : array4_from(t);
}

GrayImage image_from(const Arr& a) {
  const py::buffer_info info = a.request();
  if (info.ndim != 2) throw std::invalid_argument("expected a 2-D (h, w) float array");
  GrayImage img;
  img.h = static_cast<int>(info.shape[0]);
  img.w = static_cast<int>(info.shape[1]);
  img.pix.resize(static_cast<std::size_t>(img.h) * img.w);
  std::memcpy(img.pix.data(), info.ptr, img.pix.size() * sizeof(float));
  return img;
}

BnPolicy bn_from(const std::string& s) {
  if (s == "default") return BnPolicy::kDefault;
  if (s == "none") return BnPolicy::kNone;
  throw std::invalid_argument("bn must be 'default' or 'none', got '" + s + "'");
}

ModelConfig config_from(int levels, const std::vector<int>& channels, int rdb_depth,
                        const std::string& bn) {
  ModelConfig c;
  c.levels = levels;
  c.channels = channels;
  c.rdb_depth = rdb_depth;
  c.bn_policy = bn_from(bn);
  c.validate();
  return c;
}

class PyModel {
 public:
  PyModel(int levels, const std::vector<int>& channels, int rdb_depth, const std::string& bn,
          std::uint64_t seed)
      : cfg_(config_from(levels, channels, rdb_depth, bn)),
        net_(cfg_),
        ps_(build<float>(cfg_, seed)) {}

  explicit PyModel(const Checkpoint& cp)
      : cfg_(cp.config),
        net_(cfg_),
        ps_(restore_params(cp)),
        epoch_(cp.epoch),
        step_(cp.step),
        rng_state_(cp.rng_state) {}

  static PyModel load(const std::string& path) { return PyModel(load_checkpoint(path)); }

  void save(const std::string& path) const {
    save_checkpoint(path, make_checkpoint(cfg_, ps_, TrainProgress{epoch_, step_, rng_state_}));
  }

  py::array_t<float> forward(const Arr& x) {
    const Tensor<float> t = tensor_from(x);
    return array_like(net_.forward(t, ps_, Mode::kInfer), x);
  }

  // pad to the transform grid, run inference, crop back, clamp to [0, 1]
  py::array_t<float> denoise(const Arr& noisy) {
    Tensor<float> t = tensor_from(noisy);
    auto [padded, rec] = pad_to_grid(t, cfg_.levels);
    Tensor<float> out = crop_back(net_.forward(padded, ps_, Mode::kInfer), rec);
    for (float& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
    return array_like(out, noisy);
  }

  double train_step(const Arr& noisy, const Arr& clean, double lr) {
    const Tensor<float> n = tensor_from(noisy);
    const Tensor<float> c = tensor_from(clean);
    const float loss = net_.backward(n, c, ps_);
    adam_step(ps_, lr, step_ + 1);
    ++step_;
    return loss;
  }

  std::size_t param_count() const { return ps_.scalar_count(/*trainable_only=*/true); }
  int levels() const { return cfg_.levels; }
  std::vector<int> channels() const { return cfg_.channels; }
  int rdb_depth() const { return cfg_.rdb_depth; }
  std::string bn() const { return cfg_.bn_policy == BnPolicy::kDefault ? "default" : "none"; }
  std::uint64_t step() const { return step_; }

 private:
  ModelConfig cfg_;
  Network<float> net_;
  ParamStore<float> ps_;
  std::uint64_t epoch_ = 0;
  std::uint64_t step_ = 0;
  std::string rng_state_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "multi-wavelet residual dense CNN grayscale denoiser";

  m.def(
      "dwt", [](const Arr& x) { return array4_from(dwt(tensor_from(x))); }, py::arg("x"),
      "analysis transform: (n, c, h, w) -> (n, 4c, h/2, w/2), subbands [A|H|V|D]");
  m.def(
      "idwt", [](const Arr& s) { return array4_from(idwt(tensor_from(s))); }, py::arg("s"),
      "synthesis transform, exact inverse of dwt");
  m.def(
      "relu", [](const Arr& x) { return array_like(relu(tensor_from(x)), x); }, py::arg("x"));
  m.def(
      "conv2d",
      [](const Arr& x, const Arr& w, const py::object& b, int stride, int pad) {
        const py::buffer_info wi = w.request();
        if (wi.ndim != 4) throw std::invalid_argument("weights must be (c_out, c_in, kh, kw)");
        const Tensor<float> xt = tensor_from(x);
        const Tensor<float> wt = tensor_from(w);
        Tensor<float> bt(1, 1, 1, 1);
        Tensor<float>* bp = nullptr;
        if (!b.is_none()) {
          const Arr ba = b.cast<Arr>();
          const py::buffer_info bi = ba.request();
          if (bi.ndim != 1 || bi.shape[0] != wi.shape[0]) {
            throw std::invalid_argument("bias must be 1-D with c_out entries");
          }
          bt = Tensor<float>(1, static_cast<int>(bi.shape[0]), 1, 1);
          std::memcpy(bt.data.data(), bi.ptr, bt.numel() * sizeof(float));
          bp = &bt;
        }
        return array4_from(conv2d(xt, view_of(wt, bp), stride, pad));
      },
      py::arg("x"), py::arg("weights"), py::arg("bias") = py::none(), py::arg("stride") = 1,
      py::arg("pad") = 0, "cross-correlation over (n, c, h, w)");

  m.def(
      "add_gaussian_noise",
      [](const Arr& clean, double sigma, std::uint64_t seed) {
        std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
        std::mt19937 rng(sq);
        return array_like(add_gaussian_noise(tensor_from(clean), sigma, rng), clean);
      },
      py::arg("clean"), py::arg("sigma"), py::arg("seed") = 0,
      "adds N(0, (sigma/255)^2) noise; sigma is on the 0..255 scale");

  m.def(
      "mse", [](const Arr& a, const Arr& b) { return mse255(image_from(a), image_from(b)); },
      py::arg("a"), py::arg("b"), "mean squared error on the 0..255 scale");
  m.def(
      "psnr", [](const Arr& a, const Arr& b) { return psnr(image_from(a), image_from(b)); },
      py::arg("a"), py::arg("b"), "peak signal-to-noise ratio in dB");
  m.def(
      "ssim", [](const Arr& a, const Arr& b) { return ssim(image_from(a), image_from(b)); },
      py::arg("a"), py::arg("b"), "mean structural similarity (11x11 Gaussian window)");
  m.def("expected_noisy_psnr", &expected_noisy_psnr, py::arg("sigma"));

  m.def(
      "load_image",
      [](const std::string& path) {
        const GrayImage img = load_image(path);
        py::array_t<float> out({img.h, img.w});
        std::memcpy(out.mutable_data(), img.pix.data(), img.pix.size() * sizeof(float));
        return out;
      },
      py::arg("path"), "loads a .pgm/.png as a (h, w) float array in [0, 1]");
  m.def(
      "save_image",
      [](const std::string& path, const Arr& a) { save_image(path, image_from(a)); },
      py::arg("path"), py::arg("image"));

  py::class_<PyModel>(m, "Model")
      .def(py::init<int, const std::vector<int>&, int, const std::string&, std::uint64_t>(),
           py::arg("levels") = 3, py::arg("channels") = std::vector<int>{32, 64, 128},
           py::arg("rdb_depth") = 3, py::arg("bn") = "default", py::arg("seed") = 0)
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("forward", &PyModel::forward, py::arg("x"),
           "inference on a grid-aligned input, no padding or clamping")
      .def("denoise", &PyModel::denoise, py::arg("noisy"))
      .def("train_step", &PyModel::train_step, py::arg("noisy"), py::arg("clean"), py::arg("lr"),
           "one forward/backward/Adam update; returns the loss")
      .def_property_readonly("param_count", &PyModel::param_count)
      .def_property_readonly("levels", &PyModel::levels)
      .def_property_readonly("channels", &PyModel::channels)
      .def_property_readonly("rdb_depth", &PyModel::rdb_depth)
      .def_property_readonly("bn", &PyModel::bn)
      .def_property_readonly("step", &PyModel::step);
}
