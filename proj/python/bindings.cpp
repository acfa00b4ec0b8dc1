#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "brst/analysis.hpp"
#include "brst/checkpoint.hpp"
#include "brst/corpus.hpp"
#include "brst/ctc.hpp"
#include "brst/decode.hpp"
#include "brst/errors.hpp"
#include "brst/features.hpp"
#include "brst/model.hpp"
#include "brst/train.hpp"

namespace py = pybind11;
using namespace brst;

namespace {

Array array_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  std::vector<int64_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[static_cast<size_t>(i)] = arr.shape(i);
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Array(std::move(shape), std::move(data));
}

py::array_t<double> numpy_from_array(const Array& a) {
  std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
  py::array_t<double> out(shape);
  std::copy(a.data(), a.data() + a.numel(), out.mutable_data());
  return out;
}

// Model handle for the Python surface: build from a preset or load a
// checkpoint, then encode/decode.
class PyModel {
 public:
  PyModel(const std::string& preset, const std::vector<std::string>& tokens, uint64_t seed) {
    Vocabulary vocab = Vocabulary::build(tokens);
    params_ = build_model(preset_config(preset, vocab.size()), vocab, seed);
  }
  explicit PyModel(ModelParams params) : params_(std::move(params)) {}

  static PyModel load(const std::string& path) { return PyModel(load_checkpoint(path)); }
  void save(const std::string& path) const { save_checkpoint(params_, path); }

  py::array_t<double> encode_features(const py::array_t<double, py::array::c_style | py::array::forcecast>& feats) const {
    return numpy_from_array(encode(params_, array_from_numpy(feats)).output.value());
  }

  py::array_t<double> ctc_logprobs(const py::array_t<double, py::array::c_style | py::array::forcecast>& feats) const {
    EncodeResult enc = encode(params_, array_from_numpy(feats));
    return numpy_from_array(ctc_head(params_, enc.output).value());
  }

  std::vector<std::string> decode_greedy(const py::array_t<double, py::array::c_style | py::array::forcecast>& feats) const {
    EncodeResult enc = encode(params_, array_from_numpy(feats));
    Array lp = ctc_head(params_, enc.output).value();
    return ids_to_tokens(ctc_greedy(lp, params_.vocab.blank_id));
  }

  std::vector<std::string> decode_rescore(const py::array_t<double, py::array::c_style | py::array::forcecast>& feats, int beam, double weight) const {
    EncodeResult enc = encode(params_, array_from_numpy(feats));
    const Array H = enc.output.value();
    Array lp = ctc_head(params_, enc.output).value();
    NBestList nb = ctc_prefix_beam(lp, params_.vocab.blank_id, beam);
    Hypothesis best = attention_rescore(params_, H, nb, weight);
    return ids_to_tokens(best.tokens);
  }

  py::dict param_counts() const {
    const ParamReport r = count_params(params_);
    py::dict d;
    d["frontend"] = r.frontend;
    d["encoder_blocks"] = r.encoder_blocks;
    d["encoder_adapters"] = r.encoder_adapters;
    d["decoder_blocks"] = r.decoder_blocks;
    d["decoder_adapters"] = r.decoder_adapters;
    d["token_embedding"] = r.token_embedding;
    d["ctc_head"] = r.ctc_head;
    d["attention_head"] = r.attention_head;
    d["total"] = r.total();
    return d;
  }

  std::vector<std::string> vocab_tokens() const { return params_.vocab.tokens; }

 private:
  std::vector<std::string> ids_to_tokens(const TokenSequence& ids) const {
    std::vector<std::string> out;
    for (int id : ids) out.push_back(params_.vocab.tokens[static_cast<size_t>(id)]);
    return out;
  }
  ModelParams params_;
};

py::dict report_to_dict(const ParamReport& r) {
  py::dict d;
  d["frontend"] = r.frontend;
  d["encoder_blocks"] = r.encoder_blocks;
  d["encoder_adapters"] = r.encoder_adapters;
  d["decoder_blocks"] = r.decoder_blocks;
  d["decoder_adapters"] = r.decoder_adapters;
  d["token_embedding"] = r.token_embedding;
  d["ctc_head"] = r.ctc_head;
  d["attention_head"] = r.attention_head;
  d["total"] = r.total();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "block-reusing speech transformer core";

  py::register_exception<Error>(m, "BrstError");

  m.def(
      "compute_fbank",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& samples, int sample_rate) {
        Waveform w;
        w.samples.assign(samples.data(), samples.data() + samples.size());
        w.sample_rate = sample_rate;
        return numpy_from_array(compute_fbank(w));
      },
      py::arg("samples"), py::arg("sample_rate") = 16000,
      "80-dim log-Mel features over 25 ms windows with 10 ms shift");

  m.def(
      "apply_cmvn",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& feats) {
        return numpy_from_array(apply_cmvn(array_from_numpy(feats)));
      },
      py::arg("features"));

  m.def(
      "spec_augment",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& feats, uint64_t seed, int num_freq_masks, int max_freq_bins, int num_time_masks, int max_time_frames) {
        SpecAugmentConfig cfg;
        cfg.rng_seed = seed;
        cfg.num_freq_masks = num_freq_masks;
        cfg.max_freq_bins = max_freq_bins;
        cfg.num_time_masks = num_time_masks;
        cfg.max_time_frames = max_time_frames;
        return numpy_from_array(spec_augment(array_from_numpy(feats), cfg));
      },
      py::arg("features"), py::arg("seed") = 0, py::arg("num_freq_masks") = 2, py::arg("max_freq_bins") = 10, py::arg("num_time_masks") = 2, py::arg("max_time_frames") = 50);

  m.def("read_fbnk", [](const std::string& path) { return numpy_from_array(read_fbnk(path)); }, py::arg("path"));
  m.def(
      "write_fbnk",
      [](const std::string& path, const py::array_t<double, py::array::c_style | py::array::forcecast>& feats) {
        write_fbnk(path, array_from_numpy(feats));
      },
      py::arg("path"), py::arg("features"));

  m.def(
      "ctc_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logprobs, const std::vector<int>& target, int blank) {
        return ctc_loss_value(array_from_numpy(logprobs), target, blank);
      },
      py::arg("logprobs"), py::arg("target"), py::arg("blank") = 0,
      "negative log-likelihood over all CTC alignments");

  m.def(
      "ctc_greedy",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logprobs, int blank) {
        return ctc_greedy(array_from_numpy(logprobs), blank);
      },
      py::arg("logprobs"), py::arg("blank") = 0);

  m.def(
      "ctc_prefix_beam",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& logprobs, int blank, int beam) {
        NBestList nb = ctc_prefix_beam(array_from_numpy(logprobs), blank, beam);
        std::vector<std::pair<std::vector<int>, double>> out;
        for (const auto& h : nb.hypotheses) out.emplace_back(h.tokens, h.score);
        return out;
      },
      py::arg("logprobs"), py::arg("blank") = 0, py::arg("beam") = 10);

  m.def(
      "cer",
      [](const std::vector<int>& reference, const std::vector<int>& hypothesis) {
        const EditStats s = compute_cer(reference, hypothesis);
        py::dict d;
        d["substitutions"] = s.substitutions;
        d["insertions"] = s.insertions;
        d["deletions"] = s.deletions;
        d["ref_len"] = s.ref_len;
        d["cer"] = s.cer;
        d["degenerate"] = s.degenerate;
        return d;
      },
      py::arg("reference"), py::arg("hypothesis"));

  m.def(
      "linear_cka",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& x, const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
        return linear_cka(array_from_numpy(x), array_from_numpy(y));
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "lr_at",
      [](int64_t step, double peak_lr, int64_t warmup_steps) {
        TrainConfig cfg;
        cfg.peak_lr = peak_lr;
        cfg.warmup_steps = warmup_steps;
        return lr_at(step, cfg);
      },
      py::arg("step"), py::arg("peak_lr") = 0.002, py::arg("warmup_steps") = 25000);

  m.def("preset_names", &preset_names);
  m.def(
      "preset_param_counts",
      [](const std::string& preset, int vocab_size) { return report_to_dict(count_params_config(preset_config(preset, vocab_size))); },
      py::arg("preset"), py::arg("vocab_size") = 4233);

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&, const std::vector<std::string>&, uint64_t>(), py::arg("preset"), py::arg("tokens"), py::arg("seed") = 0,
           "build a model for a preset over the given content tokens")
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def("encode", &PyModel::encode_features, py::arg("features"))
      .def("ctc_logprobs", &PyModel::ctc_logprobs, py::arg("features"))
      .def("decode_greedy", &PyModel::decode_greedy, py::arg("features"))
      .def("decode_rescore", &PyModel::decode_rescore, py::arg("features"), py::arg("beam") = 10, py::arg("weight") = 0.3)
      .def("param_counts", &PyModel::param_counts)
      .def_property_readonly("vocab", &PyModel::vocab_tokens);
}
