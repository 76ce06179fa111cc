#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "icvid/corpus.hpp"
#include "icvid/diffusion.hpp"
#include "icvid/forward.hpp"
#include "icvid/model.hpp"
#include "icvid/rng.hpp"

// Deterministic training: per-sample randomness is keyed (seed, step, slot)
// so a batch element's draws never depend on processing order, parameter
// freezing is enforced structurally (the optimizer owns moments only for the
// partition it updates), and every run is bitwise reproducible from
// (config, seed).

namespace icvid {

// Adaptive-moment constants (decoupled weight decay applies separately).
inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct TrainConfig {
  // Constant-with-warmup schedule. The desk-scale default is deliberately
  // hotter than a production-size run would use; see README.
  double lr = 1e-3;
  int warmup_steps = 100;
  int max_steps = 600;
  int batch_size = 4;
  uint64_t seed = 0;
  double weight_decay = 1e-4;
  ModelVariant variant = ModelVariant::kMot;
  // Number of training pairs drawn from the corpus (the scalability axis).
  int corpus_size = 2000;
  int eval_every = 100;

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& json_text);

// Linear ramp 0 -> lr over warmup_steps, then constant.
double lr_at(int step, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Optimizer

// First/second moment tensors for the parameter subset one optimizer owns.
// Entries outside the owned subset stay empty: freezing is memory parity,
// not just a skipped update.
struct AdamState {
  std::vector<char> active;         // parallel to params.values
  std::vector<Tensor<float>> m, v;  // allocated only where active
  int64_t t = 0;                    // completed steps, for bias correction

  int64_t n_moment_scalars() const;
};

// Owns the trainable partition of params.
AdamState make_adam_state(const ModelParams& params);
// Owns the subset selected by `own` (e.g. the backbone prefix during
// pretraining); ownership never widens past the trainable partition later
// updates rely on, it is simply a name filter.
AdamState make_adam_state(const ModelParams& params,
                          const std::function<bool(const std::string&)>& own);

// One decoupled-weight-decay adaptive-moment update over the owned subset.
// grads is parallel to params.values; empty entries mean zero gradient.
void adam_step(ModelParams& params, AdamState& opt,
               const std::vector<Tensor<float>>& grads, double lr,
               double weight_decay);

// ---------------------------------------------------------------------------
// Steps

// One optimizer step on a batch of corpus pairs: per sample, draw
// t ~ U[0,1] and x0 ~ N(0,I) keyed (seed, step, slot), drop conditioning
// with probability cond_drop_prob, regress the predicted velocity against
// velocity_target, and apply the mean gradient. Returns the mean loss.
// A non-finite per-sample loss aborts with step/slot/t diagnostics.
double train_step(ModelParams& params, AdamState& opt,
                  const std::vector<PairSample>& batch, const TrainConfig& tc,
                  const FlowConfig& fc, int step);

// A bare captioned clip, the unit of backbone pretraining (image-to-video
// continuation with no reference prompt).
struct ClipSample {
  VideoClip video;
  std::vector<int> caption;
};

// Backbone-only step: same draw scheme, pretrain loss (no reference rows),
// caption drop trains the null text row.
double pretrain_step(ModelParams& params, AdamState& opt,
                     const std::vector<ClipSample>& batch,
                     const TrainConfig& tc, const FlowConfig& fc, int step);

// ---------------------------------------------------------------------------
// Loops

// Deterministic on-demand sample pools; regenerating per index keeps a
// 2000-pair corpus out of resident memory.
struct SamplePool {
  int size = 0;
  std::function<PairSample(int)> at;
};
struct ClipPool {
  int size = 0;
  std::function<ClipSample(int)> at;
};

// First `limit` pairs of a split (the scalability subsets are nested).
SamplePool corpus_pool(const CorpusConfig& cc, Split split, int limit);
// Same pairs flattened to captioned clips: pair i yields its reference clip
// at 2i and its target clip at 2i+1.
ClipPool corpus_clip_pool(const CorpusConfig& cc, Split split, int limit);

struct TrainCallbacks {
  std::function<void(int step, double loss, double lr)> on_step;
};

// Runs steps 0..max_steps-1, drawing batch_size pool indices with
// replacement per step, keyed (seed, step, slot).
void train_loop(ModelParams& params, AdamState& opt, const SamplePool& pool,
                const TrainConfig& tc, const FlowConfig& fc,
                const TrainCallbacks& cb = {});

// Image-to-video pretraining of a fresh backbone on captioned clips. The
// returned parameter set is a single-branch model whose backbone prefix is
// ready for seed_from_backbone into any adapted variant.
ModelParams pretrain_backbone(const ModelConfig& cfg, const ClipPool& pool,
                              const TrainConfig& tc, const FlowConfig& fc,
                              const TrainCallbacks& cb = {});

}  // namespace icvid
