#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "icvid/cli.hpp"
#include "icvid/errors.hpp"
#include "icvid/experiment.hpp"
#include "icvid/forward.hpp"
#include "icvid/tensor_io.hpp"

namespace py = pybind11;
using namespace icvid;

namespace {

template <class T>
py::array_t<T> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<T> out(shape);
  std::memcpy(out.mutable_data(), t.data(), sizeof(T) * size_t(t.numel()));
  return out;
}

template <class T>
Tensor<T> from_numpy(
    const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
  Tensor<T> t(shape);
  std::memcpy(t.data(), a.data(), sizeof(T) * size_t(t.numel()));
  return t;
}

// A user-supplied split name is argument misuse, not bad data.
Split parse_split_arg(const std::string& name) {
  try {
    return split_from_name(name);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

py::dict record_dict(const EvalRecord& r) {
  py::dict d;
  d["sample_id"] = r.sample_id;
  d["split"] = split_name(r.split);
  d["true_semantic"] = r.true_semantic;
  d["predicted_semantic"] = r.predicted_semantic;
  d["alignment"] = r.alignment;
  d["smoothness"] = r.smoothness;
  d["dynamic"] = r.dynamic;
  return d;
}

py::dict event_dict(const EvalEvent& e) {
  py::dict d;
  d["step"] = e.step;
  d["loss"] = e.loss;
  d["accuracy"] = e.accuracy;
  d["alignment"] = e.alignment;
  d["smoothness"] = e.smoothness;
  d["dynamic"] = e.dynamic;
  return d;
}

// Owns a parameter set; the handle is what Python trains against, samples
// from, and round-trips through checkpoints.
struct ModelHandle {
  ModelParams params;
  int64_t step = 0;
  uint64_t seed = 0;

  static ModelHandle init(const std::string& model_json, uint64_t seed) {
    ModelHandle h;
    h.params = init_params(model_config_from_json(model_json), seed);
    h.seed = seed;
    return h;
  }

  static ModelHandle load(const std::string& dir) {
    LoadedCheckpoint ck = load_checkpoint(dir);
    return ModelHandle{std::move(ck.params), ck.step, ck.seed};
  }

  void save(const std::string& dir) const {
    save_checkpoint(dir, params, step, seed);
  }

  std::string config_json() const { return model_config_to_json(params.config); }

  py::array_t<float> sample(const std::string& corpus_json,
                            const std::string& flow_json,
                            const std::string& split, int index,
                            uint64_t sample_seed) const {
    const CorpusConfig cc = corpus_config_from_json(corpus_json);
    const PairSample s = corpus_sample(cc, parse_split_arg(split), index);
    ForwardInput in = make_forward_input(params.config, s);
    CounterRng rng =
        CounterRng(sample_seed, kEvalNoiseStream).fork(uint64_t(index));
    return to_numpy(
        sample_video(params, in, flow_config_from_json(flow_json), rng));
  }

  // In-context prompting from raw arrays: a reference clip demonstrating the
  // semantic, captions, and the still frame to animate.
  py::array_t<float> sample_custom(
      const std::string& flow_json,
      const py::array_t<float, py::array::c_style | py::array::forcecast>&
          ref_video,
      const std::vector<int>& ref_caption, const std::vector<int>& tar_caption,
      const py::array_t<float, py::array::c_style | py::array::forcecast>&
          first_frame,
      uint64_t sample_seed) const {
    const ModelConfig& cfg = params.config;
    PairSample s;
    s.ref_video = from_numpy(ref_video);
    s.ref_caption = ref_caption;
    s.tar_caption = tar_caption;
    // Only frame 0 of the target conditions generation; land the given frame
    // there ([h, w, c], or frame 0 of a [frames, h, w, c] clip).
    Tensor<float> frame = from_numpy(first_frame);
    const auto& fsh = frame.shape();
    const bool whole_frame =
        (fsh.size() == 3 && fsh[0] == cfg.frame_h && fsh[1] == cfg.frame_w &&
         fsh[2] == cfg.channels) ||
        (fsh.size() == 4 && fsh[0] >= 1 && fsh[1] == cfg.frame_h &&
         fsh[2] == cfg.frame_w && fsh[3] == cfg.channels);
    if (!whole_frame)
      throw ShapeError(
          "first_frame must be [h, w, c] or [frames, h, w, c] matching the "
          "model geometry");
    s.tar_video = make_clip(cfg.n_frames, cfg.frame_h, cfg.frame_w);
    std::memcpy(s.tar_video.data(), frame.data(),
                sizeof(float) * size_t(cfg.frame_h) * size_t(cfg.frame_w) *
                    size_t(cfg.channels));
    ForwardInput in = make_forward_input(cfg, s);
    CounterRng rng = CounterRng(sample_seed, kEvalNoiseStream).fork(0);
    return to_numpy(
        sample_video(params, in, flow_config_from_json(flow_json), rng));
  }

  py::list evaluate(const std::string& corpus_json,
                    const std::string& flow_json, const std::string& split,
                    int n_samples, uint64_t eval_seed) const {
    std::vector<EvalRecord> records = evaluate_records(
        params, flow_config_from_json(flow_json),
        corpus_config_from_json(corpus_json), parse_split_arg(split),
        n_samples, eval_seed);
    py::list out;
    for (const EvalRecord& r : records) out.append(record_dict(r));
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "in-context conditional video generation core";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_OSError);
  py::register_exception<NumericError>(m, "NumericError",
                                       PyExc_ArithmeticError);

  m.def("build_id", [] { return std::string(ICVID_BUILD_ID); });
  m.def("default_config", [] { return run_config_to_json(RunConfig{}); },
        "Flat-JSON run config with every knob at its default.");
  m.def(
      "config_hash",
      [](const std::string& j) { return run_config_hash(run_config_from_json(j)); },
      py::arg("config_json"));

  m.def(
      "corpus_sample",
      [](const std::string& corpus_json, const std::string& split, int index) {
        const CorpusConfig cc = corpus_config_from_json(corpus_json);
        const PairSample s = corpus_sample(cc, parse_split_arg(split), index);
        py::dict d;
        d["split"] = split_name(s.split);
        d["semantic"] = s.semantic.id;
        d["ref_video"] = to_numpy(s.ref_video);
        d["tar_video"] = to_numpy(s.tar_video);
        d["ref_caption"] = s.ref_caption;
        d["tar_caption"] = s.tar_caption;
        return d;
      },
      py::arg("corpus_json"), py::arg("split"), py::arg("index"),
      "One procedurally generated reference/target pair.");

  m.def(
      "encode_video",
      [](const std::string& model_json,
         const py::array_t<float, py::array::c_style | py::array::forcecast>&
             clip) {
        return to_numpy(encode_video_pre(from_numpy(clip),
                                         model_config_from_json(model_json)));
      },
      py::arg("model_json"), py::arg("clip"),
      "Patchify a [frames, h, w, 3] clip into [tokens, channels] latents.");
  m.def(
      "decode_video",
      [](const std::string& model_json,
         const py::array_t<float, py::array::c_style | py::array::forcecast>&
             tokens) {
        return to_numpy(decode_video(from_numpy(tokens),
                                     model_config_from_json(model_json)));
      },
      py::arg("model_json"), py::arg("tokens"));

  m.def(
      "sample_path",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>&
             x0,
         const py::array_t<double, py::array::c_style | py::array::forcecast>&
             x1,
         double t, double sigma_min) {
        return to_numpy(
            sample_path(from_numpy(x0), from_numpy(x1), t, sigma_min));
      },
      py::arg("x0"), py::arg("x1"), py::arg("t"), py::arg("sigma_min") = 1e-5,
      "Flow-matching interpolant x_t between noise x0 and data x1.");

  m.def(
      "oracle_score",
      [](const std::string& corpus_json, const std::string& split, int index,
         const py::array_t<float, py::array::c_style | py::array::forcecast>&
             video) {
        const CorpusConfig cc = corpus_config_from_json(corpus_json);
        const PairSample s = corpus_sample(cc, parse_split_arg(split), index);
        return record_dict(score_sample(s, from_numpy(video)));
      },
      py::arg("corpus_json"), py::arg("split"), py::arg("index"),
      py::arg("video"),
      "Exact-oracle scores of a generated video for the given pair.");

  m.def(
      "train_run",
      [](const std::string& run_json, const std::string& out_dir) {
        RunResult r = run_experiment(run_config_from_json(run_json), out_dir);
        py::dict d;
        d["run_dir"] = r.run_dir.string();
        d["config_hash"] = r.config_hash;
        py::list timeline;
        for (const EvalEvent& e : r.timeline) timeline.append(event_dict(e));
        d["timeline"] = timeline;
        d["final"] = event_dict(r.final_event());
        return d;
      },
      py::arg("run_json"), py::arg("out_dir"),
      "Full training run: pretrained backbone, adaptation, metrics, "
      "checkpoint. Returns the metrics timeline and artifact paths.");

  py::class_<ModelHandle>(m, "Model")
      .def_static("init", &ModelHandle::init, py::arg("model_json"),
                  py::arg("seed"))
      .def_static("load", &ModelHandle::load, py::arg("checkpoint_dir"))
      .def("save", &ModelHandle::save, py::arg("checkpoint_dir"))
      .def_property_readonly("config_json", &ModelHandle::config_json)
      .def_readonly("step", &ModelHandle::step)
      .def_readonly("seed", &ModelHandle::seed)
      .def("sample", &ModelHandle::sample, py::arg("corpus_json"),
           py::arg("flow_json"), py::arg("split"), py::arg("index"),
           py::arg("seed"),
           "Generate the target video for a corpus pair; returns "
           "[frames, h, w, 3] float32 in [0, 1].")
      .def("sample_custom", &ModelHandle::sample_custom, py::arg("flow_json"),
           py::arg("ref_video"), py::arg("ref_caption"),
           py::arg("tar_caption"), py::arg("first_frame"), py::arg("seed"))
      .def("evaluate", &ModelHandle::evaluate, py::arg("corpus_json"),
           py::arg("flow_json"), py::arg("split"), py::arg("n_samples"),
           py::arg("seed"));
}
