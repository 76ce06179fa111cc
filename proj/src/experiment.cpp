#include "icvid/experiment.hpp"

#include <fstream>
#include <limits>

#include <json.hpp>

#include "icvid/errors.hpp"
#include "icvid/tensor_io.hpp"

namespace icvid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

json merged_flat_json(const RunConfig& cfg) {
  json flat = json::parse(model_config_to_json(cfg.model));
  flat.update(json::parse(flow_config_to_json(cfg.flow)));
  flat.update(json::parse(train_config_to_json(cfg.train)));
  flat.update(json::parse(corpus_config_to_json(cfg.corpus)));
  flat["pretrain_steps"] = cfg.pretrain_steps;
  flat["pretrain_seed"] = cfg.pretrain_seed;
  flat["pretrain_pool"] = cfg.pretrain_pool;
  flat["eval_samples"] = cfg.eval_samples;
  flat["debug_nan_step"] = cfg.debug_nan_step;
  return flat;
}

}  // namespace

void RunConfig::normalize() {
  model.variant = train.variant;
  corpus.n_frames = model.n_frames;
  corpus.frame_h = model.frame_h;
  corpus.frame_w = model.frame_w;
}

void RunConfig::validate() const {
  model.validate();
  flow.validate();
  train.validate();
  if (model.variant != train.variant)
    throw UsageError("model and train variant disagree; call normalize()");
  if (corpus.n_frames != model.n_frames || corpus.frame_h != model.frame_h ||
      corpus.frame_w != model.frame_w)
    throw UsageError("corpus clip geometry disagrees with the model; call "
                     "normalize()");
  if (train.corpus_size > corpus.n_train)
    throw UsageError("corpus_size (" + std::to_string(train.corpus_size) +
                     ") exceeds the train split (" +
                     std::to_string(corpus.n_train) + ")");
  if (pretrain_steps < 0)
    throw UsageError("pretrain_steps must be >= 0, got " +
                     std::to_string(pretrain_steps));
  if (pretrain_pool < 1)
    throw UsageError("pretrain_pool must be >= 1, got " +
                     std::to_string(pretrain_pool));
  if (eval_samples < 1)
    throw UsageError("eval_samples must be >= 1, got " +
                     std::to_string(eval_samples));
  if (debug_nan_step < -1)
    throw UsageError("debug_nan_step must be -1 (off) or a step index");
}

std::string run_config_to_json(const RunConfig& cfg) {
  RunConfig resolved = cfg;
  resolved.normalize();
  return merged_flat_json(resolved).dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& json_text) {
  RunConfig cfg;
  cfg.model = model_config_from_json(json_text);
  cfg.flow = flow_config_from_json(json_text);
  cfg.train = train_config_from_json(json_text);
  cfg.corpus = corpus_config_from_json(json_text);
  try {
    json j = json::parse(json_text);
    cfg.pretrain_steps = j.at("pretrain_steps").get<int>();
    cfg.pretrain_seed = j.at("pretrain_seed").get<uint64_t>();
    cfg.pretrain_pool = j.at("pretrain_pool").get<int>();
    cfg.eval_samples = j.at("eval_samples").get<int>();
    cfg.debug_nan_step = j.at("debug_nan_step").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("run config JSON is malformed: ") + e.what());
  }
  cfg.normalize();
  cfg.validate();
  return cfg;
}

std::string run_config_hash(const RunConfig& cfg) {
  return hex64(fnv1a64(run_config_to_json(cfg)));
}

std::string eval_event_to_json(const EvalEvent& e) {
  json j;
  j["step"] = e.step;
  j["loss"] = e.loss;
  j["accuracy"] = e.accuracy;
  j["alignment"] = e.alignment;
  j["smoothness"] = e.smoothness;
  j["dynamic"] = e.dynamic;
  return j.dump();
}

EvalEvent eval_event_from_json(const std::string& line) {
  EvalEvent e;
  try {
    json j = json::parse(line);
    e.step = j.at("step").get<int>();
    e.loss = j.at("loss").get<double>();
    e.accuracy = j.at("accuracy").get<double>();
    e.alignment = j.at("alignment").get<double>();
    e.smoothness = j.at("smoothness").get<double>();
    e.dynamic = j.at("dynamic").get<double>();
  } catch (const json::exception& ex) {
    throw DataError(std::string("eval event JSON is malformed: ") + ex.what());
  }
  return e;
}

std::vector<EvalRecord> evaluate_records(const ModelParams& params,
                                         const FlowConfig& flow,
                                         const CorpusConfig& corpus,
                                         Split split, int n_samples,
                                         uint64_t seed) {
  std::vector<EvalRecord> records;
  records.reserve(size_t(n_samples));
  SamplePool pool = corpus_pool(corpus, split, n_samples);
  for (int i = 0; i < n_samples; ++i) {
    PairSample sample = pool.at(i);
    ForwardInput in = make_forward_input(params.config, sample);
    CounterRng rng = CounterRng(seed, kEvalNoiseStream).fork(uint64_t(i));
    VideoClip gen = sample_video(params, in, flow, rng);
    records.push_back(score_sample(sample, gen));
  }
  return records;
}

EvalEvent evaluate_model(const ModelParams& params, const FlowConfig& flow,
                         const CorpusConfig& corpus, Split split,
                         int n_samples, uint64_t seed, int step_label,
                         double loss_label) {
  std::vector<EvalRecord> records =
      evaluate_records(params, flow, corpus, split, n_samples, seed);
  std::vector<EvalAggregate> aggs = aggregate_records(records);
  EvalEvent e;
  e.step = step_label;
  e.loss = loss_label;
  e.accuracy = aggs.at(0).accuracy;
  e.alignment = aggs.at(0).alignment;
  e.smoothness = aggs.at(0).smoothness;
  e.dynamic = aggs.at(0).dynamic;
  return e;
}

ModelParams pretrained_backbone(const RunConfig& cfg,
                                const fs::path& cache_dir) {
  // The backbone is variant-agnostic: initialize it as a single-branch model
  // with adaptation-only knobs pinned, so every sweep combination that cannot
  // change backbone weights shares one cache entry.
  ModelConfig pcfg = cfg.model;
  pcfg.variant = ModelVariant::kSingleBranch;
  pcfg.mot_layers = layer_set_preset("all", pcfg.n_layers);
  pcfg.lora_rank = 4;
  pcfg.validate();

  TrainConfig ptc;
  ptc.lr = cfg.train.lr;
  ptc.warmup_steps = std::min(cfg.train.warmup_steps, cfg.pretrain_steps);
  ptc.max_steps = cfg.pretrain_steps;
  ptc.batch_size = cfg.train.batch_size;
  ptc.seed = cfg.pretrain_seed;
  ptc.weight_decay = cfg.train.weight_decay;
  ptc.variant = ModelVariant::kSingleBranch;
  ptc.corpus_size = cfg.pretrain_pool;
  ptc.eval_every = 1;

  if (cfg.pretrain_steps == 0) return init_params(pcfg, cfg.pretrain_seed);

  json key;
  key["model"] = json::parse(model_config_to_json(pcfg));
  key["sigma_min"] = cfg.flow.sigma_min;
  key["cond_drop_prob"] = cfg.flow.cond_drop_prob;
  key["lr"] = ptc.lr;
  key["warmup_steps"] = ptc.warmup_steps;
  key["batch_size"] = ptc.batch_size;
  key["weight_decay"] = ptc.weight_decay;
  key["pretrain_steps"] = cfg.pretrain_steps;
  key["pretrain_seed"] = cfg.pretrain_seed;
  key["pretrain_pool"] = cfg.pretrain_pool;
  key["master_seed"] = cfg.corpus.master_seed;
  const fs::path dir = cache_dir / hex64(fnv1a64(key.dump()));

  if (fs::exists(dir / "manifest.json")) return load_checkpoint(dir.string()).params;

  const uint64_t master = cfg.corpus.master_seed;
  const int f = cfg.model.n_frames, h = cfg.model.frame_h, w = cfg.model.frame_w;
  ClipPool pool{cfg.pretrain_pool, [master, f, h, w](int i) {
                  BaseSample b = gen_base_sample(master, i, f, h, w);
                  return ClipSample{std::move(b.video), std::move(b.caption)};
                }};
  ModelParams params = pretrain_backbone(pcfg, pool, ptc, cfg.flow);
  fs::create_directories(dir.parent_path());
  save_checkpoint(dir.string(), params, cfg.pretrain_steps, cfg.pretrain_seed);
  return params;
}

const EvalEvent& RunResult::final_event() const {
  if (timeline.empty())
    throw UsageError("run produced no eval events");
  return timeline.back();
}

void write_config_snapshot(const fs::path& dir, const RunConfig& cfg) {
  RunConfig resolved = cfg;
  resolved.normalize();
  json snapshot = merged_flat_json(resolved);
  snapshot["build_id"] = ICVID_BUILD_ID;
  snapshot["config_hash"] = run_config_hash(resolved);
  write_text(dir / "config.json", snapshot.dump(2) + "\n");
}

RunResult run_experiment(const RunConfig& cfg0, const fs::path& out_dir) {
  RunConfig cfg = cfg0;
  cfg.normalize();
  cfg.validate();
  if (cfg.train.max_steps < 1)
    throw UsageError("run_experiment requires max_steps >= 1");
  if (cfg.eval_samples > cfg.corpus.n_test)
    throw UsageError("eval_samples (" + std::to_string(cfg.eval_samples) +
                     ") exceeds the test split (" +
                     std::to_string(cfg.corpus.n_test) + ")");

  const std::string hash = run_config_hash(cfg);
  const fs::path run_dir =
      out_dir / ("run-" + hash + "-s" + std::to_string(cfg.train.seed));
  fs::create_directories(run_dir);
  write_config_snapshot(run_dir, cfg);

  ModelParams backbone = pretrained_backbone(cfg, out_dir / "backbone");
  ModelParams params = init_params(cfg.model, cfg.train.seed);
  seed_from_backbone(params, backbone);
  AdamState opt = make_adam_state(params);
  SamplePool pool =
      corpus_pool(cfg.corpus, Split::Train, cfg.train.corpus_size);

  std::ofstream metrics(run_dir / "metrics.jsonl",
                        std::ios::binary | std::ios::trunc);
  if (!metrics)
    throw DataError("cannot open for writing: " +
                    (run_dir / "metrics.jsonl").string());

  RunResult result{cfg, run_dir, hash, {}};
  double window_loss = 0.0;
  int window_n = 0;
  TrainCallbacks cb;
  cb.on_step = [&](int step, double loss, double) {
    window_loss += loss;
    window_n += 1;
    const int done = step + 1;
    if (done % cfg.train.eval_every != 0 && done != cfg.train.max_steps)
      return;
    EvalEvent e =
        evaluate_model(params, cfg.flow, cfg.corpus, Split::Test,
                       cfg.eval_samples, cfg.train.seed, done,
                       window_loss / window_n);
    window_loss = 0.0;
    window_n = 0;
    metrics << eval_event_to_json(e) << "\n" << std::flush;
    result.timeline.push_back(e);
  };
  TrainCallbacks hooked = cb;
  if (cfg.debug_nan_step >= 0) {
    hooked.on_step = [&, inner = cb.on_step](int step, double loss, double lr) {
      inner(step, loss, lr);
      if (step == cfg.debug_nan_step)
        params.at("backbone.head.w").data()[0] =
            std::numeric_limits<float>::quiet_NaN();
    };
  }
  train_loop(params, opt, pool, cfg.train, cfg.flow, hooked);

  save_checkpoint((run_dir / "checkpoint").string(), params,
                  cfg.train.max_steps, cfg.train.seed);
  return result;
}

std::vector<RunResult> run_sweep(const RunConfig& base, const SweepSpec& sweep,
                                 const fs::path& out_dir) {
  const std::vector<ModelVariant> variants =
      sweep.variants.empty() ? std::vector<ModelVariant>{base.train.variant}
                             : sweep.variants;
  const std::vector<int> sizes =
      sweep.corpus_sizes.empty() ? std::vector<int>{base.train.corpus_size}
                                 : sweep.corpus_sizes;
  const std::vector<PeVariant> pes =
      sweep.pes.empty() ? std::vector<PeVariant>{base.model.pe} : sweep.pes;
  const std::vector<std::string> layer_sets =
      sweep.layer_sets.empty() ? std::vector<std::string>{""}
                               : sweep.layer_sets;
  const std::vector<uint64_t> seeds =
      sweep.seeds.empty() ? std::vector<uint64_t>{base.train.seed}
                          : sweep.seeds;

  fs::create_directories(out_dir);
  std::ofstream table(out_dir / "results.jsonl",
                      std::ios::binary | std::ios::app);
  if (!table)
    throw DataError("cannot open for writing: " +
                    (out_dir / "results.jsonl").string());

  std::vector<RunResult> results;
  for (ModelVariant variant : variants)
    for (int size : sizes)
      for (PeVariant pe : pes)
        for (const std::string& ls : layer_sets)
          for (uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.train.variant = variant;
            cfg.train.corpus_size = size;
            cfg.model.pe = pe;
            if (!ls.empty())
              cfg.model.mot_layers = layer_set_preset(ls, cfg.model.n_layers);
            cfg.train.seed = seed;
            cfg.normalize();
            RunResult r = run_experiment(cfg, out_dir);
            const EvalEvent& fin = r.final_event();
            json row = json::parse(eval_event_to_json(fin));
            row["hash"] = r.config_hash;
            row["variant"] = variant_name(variant);
            row["corpus_size"] = size;
            row["pe"] = pe_variant_name(pe);
            row["layer_set"] = ls.empty() ? "base" : ls;
            row["seed"] = seed;
            table << row.dump() << "\n" << std::flush;
            results.push_back(std::move(r));
          }
  return results;
}

}  // namespace icvid
