#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fewsound/audio.hpp"
#include "fewsound/config.hpp"
#include "fewsound/checkpoint.hpp"
#include "fewsound/mel.hpp"
#include "fewsound/pipeline.hpp"
#include "fewsound/similarity.hpp"
#include "fewsound/toyset.hpp"

namespace py = pybind11;
using namespace fewsound;

namespace {

Tensor<double> tensor2d_from(const py::array_t<double>& arr, const char* name) {
  const auto buf = arr.request();
  if (buf.ndim != 2) throw ShapeError(std::string(name) + ": expected a 2-d array");
  Tensor<double> t({static_cast<std::size_t>(buf.shape[0]),
                    static_cast<std::size_t>(buf.shape[1])});
  auto view = arr.unchecked<2>();
  for (py::ssize_t i = 0; i < buf.shape[0]; ++i)
    for (py::ssize_t j = 0; j < buf.shape[1]; ++j)
      t.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = view(i, j);
  return t;
}

Tensor<double> tensor1d_from(const py::array_t<double>& arr, const char* name) {
  const auto buf = arr.request();
  if (buf.ndim != 1) throw ShapeError(std::string(name) + ": expected a 1-d array");
  Tensor<double> t({static_cast<std::size_t>(buf.shape[0])});
  auto view = arr.unchecked<1>();
  for (py::ssize_t i = 0; i < buf.shape[0]; ++i)
    t.at(static_cast<std::size_t>(i)) = view(i);
  return t;
}

template <typename T>
py::array_t<T> array_from(const Tensor<T>& t) {
  if (t.rank() == 1) {
    py::array_t<T> out(static_cast<py::ssize_t>(t.shape[0]));
    std::copy(t.data.begin(), t.data.end(), out.mutable_data());
    return out;
  }
  if (t.rank() != 2) throw ShapeError("array_from: rank above 2 not exposed");
  py::array_t<T> out({static_cast<py::ssize_t>(t.shape[0]),
                      static_cast<py::ssize_t>(t.shape[1])});
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

AudioClip clip_from(const py::array_t<double>& samples, int sample_rate,
                    const std::string& id) {
  const auto buf = samples.request();
  if (buf.ndim != 1) throw ShapeError("samples: expected a 1-d array");
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.source_id = id;
  clip.samples.resize(static_cast<std::size_t>(buf.shape[0]));
  auto view = samples.unchecked<1>();
  for (py::ssize_t i = 0; i < buf.shape[0]; ++i)
    clip.samples[static_cast<std::size_t>(i)] = static_cast<float>(view(i));
  return clip;
}

// Thin float-model wrapper constructed from a run-config JSON string, the
// same format the CLI consumes.
class PyModel {
 public:
  explicit PyModel(const std::string& config_json)
      : cfg_(parse_config(nlohmann::json::parse(config_json))),
        model_(cfg_.backbone, cfg_.schedule.seed) {}

  py::array_t<float> embed(const py::array_t<double>& spec, bool train_mode) {
    const Tensor<double> t = tensor2d_from(spec, "embed");
    return array_from(model_.embed_one(t.cast<float>(), train_mode ? Mode::train : Mode::eval));
  }

  py::array_t<float> attend(const py::array_t<double>& feature_map, bool train_mode) {
    const Tensor<double> t = tensor2d_from(feature_map, "attend");
    return array_from(
        model_.attend_one(t.cast<float>(), train_mode ? Mode::train : Mode::eval));
  }

  std::size_t param_count() const { return model_.param_count(); }
  std::string depth() const { return depth_string(cfg_); }

  void save(const std::string& path) { save_checkpoint(path, model_, model_digest(cfg_)); }
  void load(const std::string& path) {
    const Digest256 expect = model_digest(cfg_);
    load_checkpoint(path, model_, &expect);
  }

 private:
  RunConfig cfg_;
  Model<float> model_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "few-shot sound recognition core: DSP front end, similarity "
            "functions and the embedding model";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def(
      "logmel",
      [](const py::array_t<double>& samples, int sample_rate, std::size_t window,
         std::size_t hop, std::size_t n_mels, std::size_t target_frames) {
        MelConfig cfg;
        cfg.window = window;
        cfg.hop = hop;
        cfg.n_mels = n_mels;
        cfg.target_frames = target_frames;
        return array_from(logmel(clip_from(samples, sample_rate, "py"), cfg).bins);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000, py::arg("window") = 1024,
      py::arg("hop") = 500, py::arg("n_mels") = 128, py::arg("target_frames") = 160,
      "Log mel-spectrogram of a 16 kHz clip as a [n_mels, frames] float32 array.");

  m.def(
      "resample",
      [](const py::array_t<double>& samples, int source_hz, int target_hz) {
        AudioClip out = resample(clip_from(samples, source_hz, "py"), target_hz);
        py::array_t<float> arr(static_cast<py::ssize_t>(out.samples.size()));
        std::copy(out.samples.begin(), out.samples.end(), arr.mutable_data());
        return arr;
      },
      py::arg("samples"), py::arg("source_hz"), py::arg("target_hz") = 16000);

  m.def(
      "mix_noise",
      [](const py::array_t<double>& event, const py::array_t<double>& scene,
         double snr_db, std::uint64_t seed) {
        Rng rng(seed);
        const MixResult r = mix_noise(clip_from(event, 16000, "event"),
                                      clip_from(scene, 16000, "scene"), snr_db, rng);
        py::array_t<float> arr(static_cast<py::ssize_t>(r.clip.samples.size()));
        std::copy(r.clip.samples.begin(), r.clip.samples.end(), arr.mutable_data());
        return py::make_tuple(arr, r.scene_offset, r.gain, r.peak_scale);
      },
      py::arg("event"), py::arg("scene"), py::arg("snr_db"), py::arg("seed") = 0,
      "Returns (mix, scene_offset, gain, peak_scale).");

  m.def(
      "sim_pooled",
      [](const py::array_t<double>& xq, const py::array_t<double>& xj,
         const std::string& pooling, const std::string& dist) {
        Tape<double> t;
        return sim_pooled(t.constant(tensor2d_from(xq, "xq")),
                          t.constant(tensor2d_from(xj, "xj")),
                          pooling_from_string(pooling), distance_from_string(dist))
            .val()
            .data[0];
      },
      py::arg("xq"), py::arg("xj"), py::arg("pooling") = "avg",
      py::arg("distance") = "inner");

  m.def(
      "sim_second_order",
      [](const py::array_t<double>& xq, const py::array_t<double>& xj) {
        Tape<double> t;
        return array_from(sim_second_order(t.constant(tensor2d_from(xq, "xq")),
                                           t.constant(tensor2d_from(xj, "xj")))
                              .val());
      },
      py::arg("xq"), py::arg("xj"), "Segment-by-segment similarity matrix X_q^T X_j.");

  m.def(
      "sim_attentional",
      [](const py::array_t<double>& xq, const py::array_t<double>& xj,
         const py::array_t<double>& aq, const py::array_t<double>& aj,
         const std::string& dist) {
        Tape<double> t;
        return sim_attentional(t.constant(tensor2d_from(xq, "xq")),
                               t.constant(tensor2d_from(xj, "xj")),
                               t.constant(tensor1d_from(aq, "aq")),
                               t.constant(tensor1d_from(aj, "aj")),
                               distance_from_string(dist))
            .val()
            .data[0];
      },
      py::arg("xq"), py::arg("xj"), py::arg("aq"), py::arg("aj"),
      py::arg("distance") = "inner",
      "Attentional similarity dist(X_q A_q, X_j A_j), factorized form.");

  m.def(
      "sim_attentional_trace",
      [](const py::array_t<double>& xq, const py::array_t<double>& xj,
         const py::array_t<double>& aq, const py::array_t<double>& aj) {
        Tape<double> t;
        return sim_attentional_trace(t.constant(tensor2d_from(xq, "xq")),
                                     t.constant(tensor2d_from(xj, "xj")),
                                     t.constant(tensor1d_from(aq, "aq")),
                                     t.constant(tensor1d_from(aj, "aj")))
            .val()
            .data[0];
      },
      py::arg("xq"), py::arg("xj"), py::arg("aq"), py::arg("aj"),
      "Reference trace form A_q^T (X_q^T X_j) A_j.");

  m.def(
      "episode_loss",
      [](const py::array_t<double>& scores, std::size_t label) {
        Tensor<double> s = tensor1d_from(scores, "scores");
        s.requires_grad = true;
        Tape<double> t;
        auto vs = t.leaf(s);
        auto loss = cross_entropy_logits(vs, label);
        const double value = loss.val().data[0];
        t.backward(loss);
        return py::make_tuple(value, array_from(t.grad(vs)));
      },
      py::arg("scores"), py::arg("label"),
      "Episodic cross-entropy from class scores; returns (loss, grad).");

  m.def(
      "toy_clip",
      [](std::size_t class_idx, std::size_t clip_idx, std::uint64_t seed,
         std::size_t n_classes) {
        ToyConfig cfg;
        cfg.seed = seed;
        cfg.n_classes = n_classes;
        const AudioClip clip = synth_toy_clip(cfg, class_idx, clip_idx);
        py::array_t<float> arr(static_cast<py::ssize_t>(clip.samples.size()));
        std::copy(clip.samples.begin(), clip.samples.end(), arr.mutable_data());
        return arr;
      },
      py::arg("class_idx"), py::arg("clip_idx") = 0, py::arg("seed") = 1234,
      py::arg("n_classes") = 15,
      "One clip of the synthetic transient-event corpus.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("config_json"))
      .def("embed", &PyModel::embed, py::arg("spec"), py::arg("train_mode") = false,
           "Feature map [M, T] for a [bins, frames] spectrogram.")
      .def("attend", &PyModel::attend, py::arg("feature_map"),
           py::arg("train_mode") = false, "Attention weights over the T segments.")
      .def("param_count", &PyModel::param_count)
      .def("depth", &PyModel::depth)
      .def("save", &PyModel::save, py::arg("path"))
      .def("load", &PyModel::load, py::arg("path"));

  m.attr("__version__") = "0.1.0";
}
