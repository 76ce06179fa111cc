#include "icvid/trainer.hpp"

#include <cmath>

#include <json.hpp>

#include "icvid/errors.hpp"

namespace icvid {

using nlohmann::json;

namespace {

// RNG stream ids; disjoint from parameter init (701) and corpus streams.
constexpr uint64_t kStreamSampleDraws = 9000;    // per-sample t and x0
constexpr uint64_t kStreamBatchIndices = 9100;   // pool indices per step
constexpr uint64_t kStreamCondDrop = 9300;       // CFG conditioning drop
constexpr uint64_t kStreamPretrainDraws = 9500;  // pretraining t/x0/drop
constexpr uint64_t kStreamPretrainBatch = 9600;  // pretraining pool indices

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

Tensor<float> draw_noise(CounterRng rng, const ModelConfig& cfg) {
  Tensor<float> x0({cfg.n_video_tokens(), cfg.patch_channels()});
  for (int64_t i = 0; i < x0.numel(); ++i)
    x0.data()[i] = static_cast<float>(rng.next_gaussian());
  return x0;
}

[[noreturn]] void abort_non_finite(double loss, int step, int slot, double t) {
  throw NumericError("training loss is non-finite (loss=" +
                         std::to_string(loss) + ", step=" +
                         std::to_string(step) + ", batch slot=" +
                         std::to_string(slot) + ", t=" + std::to_string(t) +
                         ")",
                     step);
}

// Shared backward half of a training step: scalar check, gradient
// accumulation over the optimizer-owned subset.
void accumulate_grads(Tape<float>& tape, const TapeLoss<float>& tl,
                      const ModelParams& params, const AdamState& opt,
                      std::vector<Tensor<float>>& grads) {
  tape.backward(tl.loss.id);
  for (const auto& [name, leaf] : tl.leaves) {
    const int id = params.id(name);
    if (!opt.active[static_cast<size_t>(id)]) continue;
    const Tensor<float>& g = tape.grad(leaf.id);
    if (g.numel() == 0) continue;
    Tensor<float>& acc = grads[static_cast<size_t>(id)];
    if (acc.numel() == 0) acc = Tensor<float>(g.shape(), 0.0f);
    for (int64_t k = 0; k < g.numel(); ++k) acc.data()[k] += g.data()[k];
  }
}

void scale_grads(std::vector<Tensor<float>>& grads, float inv) {
  for (Tensor<float>& g : grads)
    for (int64_t k = 0; k < g.numel(); ++k) g.data()[k] *= inv;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0))
    throw UsageError("lr must be >= 0, got " + std::to_string(lr));
  if (warmup_steps < 0)
    throw UsageError("warmup_steps must be >= 0, got " +
                     std::to_string(warmup_steps));
  if (max_steps < 0)
    throw UsageError("max_steps must be >= 0, got " +
                     std::to_string(max_steps));
  if (warmup_steps > max_steps)
    throw UsageError("warmup_steps (" + std::to_string(warmup_steps) +
                     ") must not exceed max_steps (" +
                     std::to_string(max_steps) + ")");
  if (batch_size < 1)
    throw UsageError("batch_size must be >= 1, got " +
                     std::to_string(batch_size));
  if (!(weight_decay >= 0.0))
    throw UsageError("weight_decay must be >= 0, got " +
                     std::to_string(weight_decay));
  if (corpus_size < 1)
    throw UsageError("corpus_size must be >= 1, got " +
                     std::to_string(corpus_size));
  if (eval_every < 1)
    throw UsageError("eval_every must be >= 1, got " +
                     std::to_string(eval_every));
}

std::string train_config_to_json(const TrainConfig& cfg) {
  json j;
  j["lr"] = cfg.lr;
  j["warmup_steps"] = cfg.warmup_steps;
  j["max_steps"] = cfg.max_steps;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["weight_decay"] = cfg.weight_decay;
  j["variant"] = variant_name(cfg.variant);
  j["corpus_size"] = cfg.corpus_size;
  j["eval_every"] = cfg.eval_every;
  return j.dump(2) + "\n";
}

TrainConfig train_config_from_json(const std::string& json_text) {
  TrainConfig cfg;
  try {
    json j = json::parse(json_text);
    cfg.lr = j.at("lr").get<double>();
    cfg.warmup_steps = j.at("warmup_steps").get<int>();
    cfg.max_steps = j.at("max_steps").get<int>();
    cfg.batch_size = j.at("batch_size").get<int>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.weight_decay = j.at("weight_decay").get<double>();
    cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    cfg.corpus_size = j.at("corpus_size").get<int>();
    cfg.eval_every = j.at("eval_every").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("train config JSON is malformed: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

double lr_at(int step, const TrainConfig& cfg) {
  if (step < 0)
    throw UsageError("lr_at step must be >= 0, got " + std::to_string(step));
  if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) /
         static_cast<double>(cfg.warmup_steps);
}

// ---------------------------------------------------------------------------
// Optimizer

int64_t AdamState::n_moment_scalars() const {
  int64_t n = 0;
  for (const Tensor<float>& t : m) n += t.numel();
  return n;
}

AdamState make_adam_state(const ModelParams& params,
                          const std::function<bool(const std::string&)>& own) {
  AdamState opt;
  const size_t n = params.values.size();
  opt.active.resize(n, 0);
  opt.m.resize(n);
  opt.v.resize(n);
  for (size_t i = 0; i < n; ++i) {
    if (!params.trainable[i] || !own(params.names[i])) continue;
    opt.active[i] = 1;
    opt.m[i] = Tensor<float>(params.values[i].shape(), 0.0f);
    opt.v[i] = Tensor<float>(params.values[i].shape(), 0.0f);
  }
  return opt;
}

AdamState make_adam_state(const ModelParams& params) {
  return make_adam_state(params, [](const std::string&) { return true; });
}

void adam_step(ModelParams& params, AdamState& opt,
               const std::vector<Tensor<float>>& grads, double lr,
               double weight_decay) {
  if (grads.size() != params.values.size() ||
      opt.active.size() != params.values.size())
    throw UsageError("adam_step requires grads and moments parallel to the "
                     "parameter set");
  opt.t += 1;
  const float corr1 =
      static_cast<float>(1.0 / (1.0 - std::pow(kAdamBeta1, double(opt.t))));
  const float corr2 =
      static_cast<float>(1.0 / (1.0 - std::pow(kAdamBeta2, double(opt.t))));
  const float b1 = static_cast<float>(kAdamBeta1);
  const float b2 = static_cast<float>(kAdamBeta2);
  const float flr = static_cast<float>(lr);
  const float fwd = static_cast<float>(weight_decay);
  const float feps = static_cast<float>(kAdamEps);
  for (size_t i = 0; i < params.values.size(); ++i) {
    if (!opt.active[i]) continue;
    Tensor<float>& p = params.values[i];
    Tensor<float>& m = opt.m[i];
    Tensor<float>& v = opt.v[i];
    const bool has_g = grads[i].numel() > 0;
    if (has_g && grads[i].shape() != p.shape())
      throw ShapeError("gradient shape mismatch for " + params.names[i]);
    for (int64_t k = 0; k < p.numel(); ++k) {
      const float g = has_g ? grads[i].data()[k] : 0.0f;
      const float mk = b1 * m.data()[k] + (1.0f - b1) * g;
      const float vk = b2 * v.data()[k] + (1.0f - b2) * g * g;
      m.data()[k] = mk;
      v.data()[k] = vk;
      const float update =
          (mk * corr1) / (std::sqrt(vk * corr2) + feps) + fwd * p.data()[k];
      p.data()[k] -= flr * update;
    }
  }
}

// ---------------------------------------------------------------------------
// Steps

double train_step(ModelParams& params, AdamState& opt,
                  const std::vector<PairSample>& batch, const TrainConfig& tc,
                  const FlowConfig& fc, int step) {
  if (batch.empty()) throw UsageError("train_step requires a non-empty batch");
  const ModelConfig& cfg = params.config;
  const int n = static_cast<int>(batch.size());

  std::vector<ForwardInput> inputs;
  inputs.reserve(batch.size());
  for (const PairSample& s : batch) inputs.push_back(make_forward_input(cfg, s));
  CounterRng rdrop = CounterRng(tc.seed, kStreamCondDrop).fork(uint64_t(step));
  drop_condition(inputs, fc.cond_drop_prob, rdrop);

  std::vector<Tensor<float>> grads(params.values.size());
  double loss_acc = 0.0;
  const CounterRng draws =
      CounterRng(tc.seed, kStreamSampleDraws).fork(uint64_t(step));
  for (int slot = 0; slot < n; ++slot) {
    CounterRng rs = draws.fork(uint64_t(slot));
    const double t = rs.fork(0).next_unit();
    Tensor<float> x0 = draw_noise(rs.fork(1), cfg);
    Tensor<float> x1 = encode_video_pre(batch[size_t(slot)].tar_video, cfg);
    Tensor<float> x_t = sample_path(x0, x1, t, fc.sigma_min);
    Tensor<float> v = velocity_target(x0, x1, fc.sigma_min);

    Tape<float> tape;
    TapeLoss<float> tl =
        training_loss(tape, params, inputs[size_t(slot)], x_t, t, v);
    const double loss = static_cast<double>(tl.loss.val().data()[0]);
    if (!std::isfinite(loss)) abort_non_finite(loss, step, slot, t);
    loss_acc += loss;
    accumulate_grads(tape, tl, params, opt, grads);
  }
  scale_grads(grads, 1.0f / static_cast<float>(n));
  adam_step(params, opt, grads, lr_at(step, tc), tc.weight_decay);
  return loss_acc / n;
}

double pretrain_step(ModelParams& params, AdamState& opt,
                     const std::vector<ClipSample>& batch,
                     const TrainConfig& tc, const FlowConfig& fc, int step) {
  if (batch.empty())
    throw UsageError("pretrain_step requires a non-empty batch");
  const ModelConfig& cfg = params.config;
  const int n = static_cast<int>(batch.size());

  std::vector<Tensor<float>> grads(params.values.size());
  double loss_acc = 0.0;
  const CounterRng draws =
      CounterRng(tc.seed, kStreamPretrainDraws).fork(uint64_t(step));
  for (int slot = 0; slot < n; ++slot) {
    const ClipSample& s = batch[size_t(slot)];
    CounterRng rs = draws.fork(uint64_t(slot));
    const double t = rs.fork(0).next_unit();
    Tensor<float> x0 = draw_noise(rs.fork(1), cfg);
    const bool drop_text = rs.fork(2).next_unit() < fc.cond_drop_prob;
    Tensor<float> x1 = encode_video_pre(s.video, cfg);
    Tensor<float> x_t = sample_path(x0, x1, t, fc.sigma_min);
    Tensor<float> v = velocity_target(x0, x1, fc.sigma_min);
    Tensor<float> first = encode_first_frame(s.video, cfg);

    Tape<float> tape;
    TapeLoss<float> tl = pretrain_loss(tape, params, s.caption, x_t, first, t,
                                       v, drop_text);
    const double loss = static_cast<double>(tl.loss.val().data()[0]);
    if (!std::isfinite(loss)) abort_non_finite(loss, step, slot, t);
    loss_acc += loss;
    accumulate_grads(tape, tl, params, opt, grads);
  }
  scale_grads(grads, 1.0f / static_cast<float>(n));
  adam_step(params, opt, grads, lr_at(step, tc), tc.weight_decay);
  return loss_acc / n;
}

// ---------------------------------------------------------------------------
// Loops

namespace {

int split_capacity(const CorpusConfig& cc, Split split) {
  switch (split) {
    case Split::Train: return cc.n_train;
    case Split::Test: return cc.n_test;
    case Split::Zeroshot: return cc.n_zeroshot;
  }
  throw UsageError("unknown split");
}

}  // namespace

SamplePool corpus_pool(const CorpusConfig& cc, Split split, int limit) {
  const int cap = split_capacity(cc, split);
  if (limit < 1 || limit > cap)
    throw UsageError("pool limit must lie in [1, " + std::to_string(cap) +
                     "] for split " + split_name(split) + ", got " +
                     std::to_string(limit));
  return SamplePool{limit,
                    [cc, split](int i) { return corpus_sample(cc, split, i); }};
}

ClipPool corpus_clip_pool(const CorpusConfig& cc, Split split, int limit) {
  SamplePool base = corpus_pool(cc, split, limit);
  return ClipPool{2 * limit, [base](int i) {
                    PairSample p = base.at(i / 2);
                    if (i % 2 == 0)
                      return ClipSample{std::move(p.ref_video),
                                        std::move(p.ref_caption)};
                    return ClipSample{std::move(p.tar_video),
                                      std::move(p.tar_caption)};
                  }};
}

void train_loop(ModelParams& params, AdamState& opt, const SamplePool& pool,
                const TrainConfig& tc, const FlowConfig& fc,
                const TrainCallbacks& cb) {
  tc.validate();
  fc.validate();
  if (pool.size < 1 || !pool.at)
    throw UsageError("train_loop requires a non-empty sample pool");
  for (int step = 0; step < tc.max_steps; ++step) {
    CounterRng ridx =
        CounterRng(tc.seed, kStreamBatchIndices).fork(uint64_t(step));
    std::vector<PairSample> batch;
    batch.reserve(size_t(tc.batch_size));
    for (int slot = 0; slot < tc.batch_size; ++slot)
      batch.push_back(
          pool.at(static_cast<int>(ridx.next_below(uint64_t(pool.size)))));
    const double loss = train_step(params, opt, batch, tc, fc, step);
    if (cb.on_step) cb.on_step(step, loss, lr_at(step, tc));
  }
}

ModelParams pretrain_backbone(const ModelConfig& cfg, const ClipPool& pool,
                              const TrainConfig& tc, const FlowConfig& fc,
                              const TrainCallbacks& cb) {
  tc.validate();
  fc.validate();
  if (pool.size < 1 || !pool.at)
    throw UsageError("pretrain_backbone requires a non-empty clip pool");
  ModelConfig pcfg = cfg;
  pcfg.variant = ModelVariant::kSingleBranch;
  pcfg.validate();
  ModelParams params = init_params(pcfg, tc.seed);
  AdamState opt = make_adam_state(
      params, [](const std::string& n) { return starts_with(n, "backbone."); });
  for (int step = 0; step < tc.max_steps; ++step) {
    CounterRng ridx =
        CounterRng(tc.seed, kStreamPretrainBatch).fork(uint64_t(step));
    std::vector<ClipSample> batch;
    batch.reserve(size_t(tc.batch_size));
    for (int slot = 0; slot < tc.batch_size; ++slot)
      batch.push_back(
          pool.at(static_cast<int>(ridx.next_below(uint64_t(pool.size)))));
    const double loss = pretrain_step(params, opt, batch, tc, fc, step);
    if (cb.on_step) cb.on_step(step, loss, lr_at(step, tc));
  }
  return params;
}

}  // namespace icvid
