#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "icvid/corpus.hpp"
#include "icvid/diffusion.hpp"
#include "icvid/eval.hpp"
#include "icvid/model.hpp"
#include "icvid/trainer.hpp"

// The experiment driver: pretrain-once / adapt-many training runs with
// periodic oracle evaluation, plus the sweep machinery behind the ablation
// and scalability protocols.

namespace icvid {

// Everything one run needs. The JSON form is a single flat object: the keys
// of the four sections merged, with shared knobs (variant; the clip geometry
// n_frames/frame_h/frame_w) appearing once and feeding every section that
// reads them.
struct RunConfig {
  ModelConfig model;
  FlowConfig flow;
  TrainConfig train;
  CorpusConfig corpus;
  // Backbone pretraining. The backbone is pretrained once per geometry on
  // the base-dynamics family and shared across adaptation seeds, variants,
  // and corpus sizes (the adapted branches are what the sweeps compare).
  int pretrain_steps = 400;
  uint64_t pretrain_seed = 1000;
  int pretrain_pool = 256;  // base-dynamics clips available to pretraining
  // Test-split pairs scored per eval event.
  int eval_samples = 16;
  // Fault-injection hook: poison one weight with NaN after this adaptation
  // step completes, so the next step aborts with NumericError. -1 = off.
  int debug_nan_step = -1;

  // Propagates the shared knobs: train.variant into the model section,
  // model clip geometry into the corpus section.
  void normalize();
  void validate() const;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& json_text);

// Stable identity of a run: hash of the canonical resolved JSON (the
// adaptation seed is part of it, so rows are keyed per (config, seed)).
std::string run_config_hash(const RunConfig& cfg);

struct EvalEvent {
  int step = 0;            // completed training steps at the event
  double loss = 0.0;       // mean training loss since the previous event
  double accuracy = 0.0;   // oracle classification accuracy
  double alignment = 0.0;  // mean oracle alignment score, [0, 100]
  double smoothness = 0.0;
  double dynamic = 0.0;
};

std::string eval_event_to_json(const EvalEvent& e);  // one JSON-lines row
EvalEvent eval_event_from_json(const std::string& line);

// Sampling-noise stream shared by evaluation and the CLI sample verb: x0 is
// drawn from CounterRng(seed, kEvalNoiseStream).fork(sample_index).
inline constexpr uint64_t kEvalNoiseStream = 9900;

// Generates one video per pair [0, n_samples) of `split` (conditioning:
// reference video + captions + target first frame) and scores each against
// the exact oracle; sampling noise is keyed (seed, sample index).
std::vector<EvalRecord> evaluate_records(const ModelParams& params,
                                         const FlowConfig& flow,
                                         const CorpusConfig& corpus,
                                         Split split, int n_samples,
                                         uint64_t seed);
EvalEvent evaluate_model(const ModelParams& params, const FlowConfig& flow,
                         const CorpusConfig& corpus, Split split,
                         int n_samples, uint64_t seed, int step_label = 0,
                         double loss_label = 0.0);

// Returns the shared pretrained backbone for cfg, training it on first use
// and caching the checkpoint under cache_dir keyed by every knob that can
// change its weights. pretrain_steps == 0 skips training (fresh init).
ModelParams pretrained_backbone(const RunConfig& cfg,
                                const std::filesystem::path& cache_dir);

// Writes dir/config.json: the resolved flat config plus "build_id" and
// "config_hash" keys (both ignored when the snapshot is loaded back).
void write_config_snapshot(const std::filesystem::path& dir,
                           const RunConfig& cfg);

struct RunResult {
  RunConfig config;
  std::filesystem::path run_dir;
  std::string config_hash;
  std::vector<EvalEvent> timeline;  // one per eval event, last = final

  const EvalEvent& final_event() const;
};

// One full run: shared backbone -> seeded adapted model -> train with an
// eval event every eval_every steps (and at the end) -> final checkpoint.
// Writes out_dir/run-<hash>-s<seed>/{config.json, metrics.jsonl, checkpoint/}
// where config.json is the resolved snapshot plus the build id.
RunResult run_experiment(const RunConfig& cfg,
                         const std::filesystem::path& out_dir);

// Sweep axes. An empty axis keeps the base config's value.
struct SweepSpec {
  std::vector<ModelVariant> variants;
  std::vector<int> corpus_sizes;
  std::vector<PeVariant> pes;
  std::vector<std::string> layer_sets;  // named layer-set presets
  std::vector<uint64_t> seeds;
};

// Cartesian product over the non-empty axes, one run per combination per
// seed; appends one row per run to out_dir/results.jsonl.
std::vector<RunResult> run_sweep(const RunConfig& base, const SweepSpec& sweep,
                                 const std::filesystem::path& out_dir);

}  // namespace icvid
