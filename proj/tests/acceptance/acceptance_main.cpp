// Acceptance suite: one pass/fail line per criterion, exit code = number of
// failed criteria. Property criteria (1-6, 11) are exhaustive or seeded and
// run in seconds-to-minutes; the empirical criteria (7-10) train the real
// model and dominate the runtime. All artifacts land in a fresh scratch
// directory so every invocation measures a from-scratch build of the
// evidence (the shared pretrained backbone is reused across runs *within*
// one invocation, never across invocations).

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "icvid/corpus.hpp"
#include "icvid/diffusion.hpp"
#include "icvid/errors.hpp"
#include "icvid/eval.hpp"
#include "icvid/experiment.hpp"
#include "icvid/forward.hpp"
#include "icvid/gradcheck.hpp"
#include "icvid/judge.hpp"
#include "icvid/model.hpp"
#include "icvid/rng.hpp"
#include "icvid/tensor_io.hpp"
#include "icvid/trainer.hpp"

using namespace icvid;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Shared helpers (self-contained copies of the unit-test vocabulary; the
// acceptance binary deliberately shares no code with the unit suites).

template <class T>
Tensor<T> rand_mat(CounterRng rng, int64_t rows, int64_t cols, double s = 1.0) {
  Tensor<T> v({rows, cols});
  for (int64_t i = 0; i < v.numel(); ++i)
    v.data()[i] = static_cast<T>(rng.next_gaussian() * s);
  return v;
}

std::vector<int> rand_caption(CounterRng rng, int len, int vocab) {
  std::vector<int> out(static_cast<size_t>(len));
  for (int& t : out)
    t = static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab)));
  return out;
}

template <class T>
ForwardInputT<T> synth_input(const ModelConfig& cfg, uint64_t seed) {
  CounterRng rng(seed, 4100);
  ForwardInputT<T> in;
  in.ref_caption = rand_caption(rng.fork(0), cfg.caption_len, cfg.caption_vocab);
  in.tar_caption = rand_caption(rng.fork(1), cfg.caption_len, cfg.caption_vocab);
  in.ref_pre =
      rand_mat<T>(rng.fork(2), cfg.n_video_tokens(), 2 * cfg.patch_channels(), 0.5);
  in.tar_first =
      rand_mat<T>(rng.fork(3), cfg.n_video_tokens(), cfg.patch_channels(), 0.5);
  return in;
}

template <class T>
Tensor<T> synth_x(const ModelConfig& cfg, uint64_t seed) {
  return rand_mat<T>(CounterRng(seed, 4200), cfg.n_video_tokens(),
                     cfg.patch_channels(), 0.5);
}

template <class T>
bool value_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return 1e300;
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) -
                             static_cast<double>(b.data()[i])));
  return m;
}

void jitter_params(ParamSetT<double>& p, uint64_t seed, double s) {
  CounterRng rng(seed, 6200);
  for (size_t i = 0; i < p.values.size(); ++i) {
    CounterRng r = rng.fork(i);
    Tensor<double>& v = p.values[i];
    for (int64_t k = 0; k < v.numel(); ++k)
      v.data()[k] += r.next_gaussian() * s;
  }
}

std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return std::string(buf);
}

void note(const std::string& msg) {
  std::printf("# %s\n", msg.c_str());
  std::fflush(stdout);
}

struct CriterionResult {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------
// Shared empirical state: the trained runs behind criteria 7-10.

// Adaptation budget per training run, calibrated for the single-core
// reference box (see README); eval fires once, at the final step.
constexpr int kAdaptSteps = 600;
constexpr uint64_t kSeeds[3] = {1, 2, 3};
// Guidance scale for the empirical evaluations (training-time conditioning
// drop still follows the flow defaults).
constexpr double kEvalCfgScale = 1.0;

struct Empirical {
  fs::path out_dir;
  std::map<std::string, RunResult> runs;  // "variant@size@seed" -> result
  double c7_seconds = -1.0;               // pretrain + three mot@2000 runs
  bool attempted = false;
  std::string error;

  static std::string key(ModelVariant v, int size, uint64_t seed) {
    return variant_name(v) + "@" + std::to_string(size) + "@s" +
           std::to_string(seed);
  }

  RunConfig make_config(ModelVariant v, int size, uint64_t seed) const {
    RunConfig cfg;
    cfg.train.variant = v;
    cfg.train.corpus_size = size;
    cfg.train.seed = seed;
    cfg.train.max_steps = kAdaptSteps;
    cfg.train.eval_every = kAdaptSteps;  // single eval event, at the end
    cfg.flow.cfg_scale = kEvalCfgScale;
    cfg.normalize();
    return cfg;
  }

  const RunResult& run(ModelVariant v, int size, uint64_t seed) {
    const std::string k = key(v, size, seed);
    auto it = runs.find(k);
    if (it != runs.end()) return it->second;
    const Clock::time_point t0 = Clock::now();
    RunResult r = run_experiment(make_config(v, size, seed), out_dir);
    const EvalEvent& fin = r.final_event();
    note(fmt("run %-22s acc %.3f  align %6.2f  loss %.4f  %.0fs", k.c_str(),
             fin.accuracy, fin.alignment, fin.loss, seconds_since(t0)));
    return runs.emplace(k, std::move(r)).first->second;
  }

  // The three mot@2000 runs plus the one-time backbone pretraining they
  // trigger, wall-clocked together: criterion 7's CPU budget.
  void ensure_mot2000() {
    if (attempted) return;
    attempted = true;
    const Clock::time_point t0 = Clock::now();
    for (uint64_t s : kSeeds) run(ModelVariant::kMot, 2000, s);
    c7_seconds = seconds_since(t0);
  }
};

// ---------------------------------------------------------------------------
// Criterion 1: exhaustive finite-difference gradient check.

// The checked model keeps the full 4-layer architecture (joint MoT attention
// on every layer, rotary bands, adaLN, first-frame injection) at reduced
// width so that every trainable scalar is FD-checked within the time budget;
// the default width would need ~970k forward passes (hours).
ModelConfig fd_toy_config() {
  ModelConfig cfg = gradcheck_tiny_config();
  cfg.n_layers = 4;
  cfg.mot_layers = {0, 1, 2, 3};
  cfg.validate();
  return cfg;
}

// FD-checks every trainable parameter of `variant` against tape gradients,
// splitting the work over a conditional and an unconditional pass (the null
// embeddings only carry gradient when the condition is dropped). Appends the
// per-parameter tallies and returns false on any failure.
bool fd_check_variant(ModelVariant variant, uint64_t seed, size_t* n_checked,
                      double* max_rel, std::string* why) {
  ModelConfig cfg = fd_toy_config();
  cfg.variant = variant;
  ParamSetT<double> params = cast_params<double>(init_params(cfg, seed));
  jitter_params(params, seed + 1, 0.02);
  ForwardInputT<double> in = synth_input<double>(cfg, seed + 2);
  Tensor<double> x_t = synth_x<double>(cfg, seed + 3);
  Tensor<double> v_tar = synth_x<double>(cfg, seed + 4);
  const double t = 0.43;

  std::set<std::string> todo;
  for (const std::string& n : params.names)
    if (params.is_trainable(n)) todo.insert(n);

  for (bool uncond : {false, true}) {
    if (todo.empty()) break;
    in.uncond = uncond;
    Tape<double> tape;
    TapeLoss<double> tl = training_loss(tape, params, in, x_t, t, v_tar);
    tape.backward(tl.loss.id);
    std::vector<std::pair<std::string, Tensor<double>*>> fd_params;
    std::vector<Tensor<double>> grads;
    for (const auto& [name, leaf] : tl.leaves) {
      if (!todo.count(name)) continue;
      fd_params.emplace_back(name, &params.at(name));
      grads.push_back(leaf.grad());
      todo.erase(name);
    }
    auto loss_fn = [&]() { return mse(full_forward(params, in, x_t, t), v_tar); };
    GradCheckReport rep = fd_check(fd_params, loss_fn, grads, 1e-4, 1e-4, 1e-7);
    *n_checked += rep.n_checked;
    *max_rel = std::max(*max_rel, rep.max_rel);
    if (!rep.ok) {
      *why = fmt("%s: worst %s rel %.2e", variant_name(variant).c_str(),
                 rep.worst.c_str(), rep.max_rel);
      return false;
    }
  }
  if (!todo.empty()) {
    *why = variant_name(variant) + ": parameter never reached by either pass: " +
           *todo.begin();
    return false;
  }
  return true;
}

CriterionResult criterion_1() {
  const Clock::time_point t0 = Clock::now();
  size_t n_checked = 0;
  double max_rel = 0.0;
  std::string why;
  // mot covers the expert partition through the joint pass; single_branch
  // covers the backbone-owned parameters (embeddings, adaLN, head, time MLP).
  bool ok = fd_check_variant(ModelVariant::kMot, 301, &n_checked, &max_rel, &why) &&
            fd_check_variant(ModelVariant::kSingleBranch, 401, &n_checked,
                             &max_rel, &why);
  const double secs = seconds_since(t0);
  if (ok && secs >= 60.0) {
    ok = false;
    why = fmt("over time budget: %.1fs", secs);
  }
  return {ok, ok ? fmt("4-layer toy model, %zu trainable scalars FD-checked "
                       "(h=1e-4, 64-bit), max rel %.1e, %.1fs",
                       n_checked, max_rel, secs)
                 : why};
}

// ---------------------------------------------------------------------------
// Criterion 2: flow-matching identities.

CriterionResult criterion_2() {
  CounterRng rng(12, 7100);
  const double sm = 1e-5;

  // Endpoints, bitwise, both dtypes.
  {
    Tensor<double> x0 = rand_mat<double>(rng.fork(0), 7, 5);
    Tensor<double> x1 = rand_mat<double>(rng.fork(1), 7, 5);
    Tensor<double> at0 = sample_path(x0, x1, 0.0, sm);
    Tensor<double> at1 = sample_path(x0, x1, 1.0, sm);
    Tensor<double> want1(x1.shape());
    for (int64_t i = 0; i < want1.numel(); ++i)
      want1.data()[i] = x1.data()[i] + sm * x0.data()[i];
    if (!value_equal(at0, x0)) return {false, "t=0 endpoint is not bitwise x0"};
    if (!value_equal(at1, want1))
      return {false, "t=1 endpoint is not bitwise x1 + sigma_min*x0"};
  }
  {
    Tensor<float> x0 = rand_mat<float>(rng.fork(2), 7, 5);
    Tensor<float> x1 = rand_mat<float>(rng.fork(3), 7, 5);
    Tensor<float> want1(x1.shape());
    for (int64_t i = 0; i < want1.numel(); ++i)
      want1.data()[i] =
          x1.data()[i] + static_cast<float>(sm) * x0.data()[i];
    if (!value_equal(sample_path(x0, x1, 0.0, sm), x0))
      return {false, "float t=0 endpoint is not bitwise x0"};
    if (!value_equal(sample_path(x0, x1, 1.0, sm), want1))
      return {false, "float t=1 endpoint is not bitwise x1 + sigma_min*x0"};
  }

  // Velocity is constant in t: central difference of the path at several
  // probe times matches velocity_target.
  Tensor<double> x0 = rand_mat<double>(rng.fork(4), 6, 8);
  Tensor<double> x1 = rand_mat<double>(rng.fork(5), 6, 8);
  Tensor<double> v = velocity_target(x0, x1, sm);
  double worst_fd = 0.0;
  const double h = 1e-6;
  for (double t : {0.1, 0.25, 0.5, 0.77, 0.9}) {
    Tensor<double> hi = sample_path(x0, x1, t + h, sm);
    Tensor<double> lo = sample_path(x0, x1, t - h, sm);
    Tensor<double> fd(v.shape());
    for (int64_t i = 0; i < fd.numel(); ++i)
      fd.data()[i] = (hi.data()[i] - lo.data()[i]) / (2 * h);
    worst_fd = std::max(worst_fd, max_abs_diff(fd, v));
  }
  if (worst_fd >= 1e-4)
    return {false, fmt("velocity drifts with t: FD deviation %.2e", worst_fd)};

  // One Euler step on the constant field is exact.
  auto field = [&](const Tensor<double>&, double) { return v; };
  Tensor<double> one = euler_integrate(x0, 1, field);
  Tensor<double> want(x0.shape());
  for (int64_t i = 0; i < want.numel(); ++i)
    want.data()[i] = x0.data()[i] + v.data()[i];
  const double euler_err = max_abs_diff(one, want);
  const double end_err = max_abs_diff(one, sample_path(x0, x1, 1.0, sm));
  if (euler_err > 0.0)
    return {false, fmt("one-step Euler deviates from x0 + V by %.2e", euler_err)};
  if (end_err >= 1e-6)
    return {false, fmt("one-step Euler misses the t=1 path point by %.2e", end_err)};
  return {true, fmt("endpoints bitwise (f32+f64), velocity constant in t "
                    "(FD dev %.1e), one-step Euler exact (t=1 gap %.1e)",
                    worst_fd, end_err)};
}

// ---------------------------------------------------------------------------
// Criterion 3: reference-masked MoT equals the standalone backbone bitwise.

CriterionResult criterion_3() {
  ModelConfig cfg;
  cfg.variant = ModelVariant::kMot;
  ModelParams params = init_params(cfg, 7);
  // Scramble the expert branch so the equality cannot ride on the experts
  // still being byte copies of the backbone.
  CounterRng scr(8, 7300);
  for (size_t i = 0; i < params.names.size(); ++i) {
    if (params.names[i].rfind("expert.", 0) != 0) continue;
    CounterRng r = scr.fork(i);
    Tensor<float>& v = params.values[i];
    for (int64_t k = 0; k < v.numel(); ++k)
      v.data()[k] = static_cast<float>(r.next_gaussian());
  }

  CorpusConfig cc;
  cc.master_seed = 92;
  int n_cases = 0;
  for (int i = 0; i < 3; ++i) {
    ForwardInput real = make_forward_input(cfg, corpus_sample(cc, Split::Test, i));
    ForwardInput synth = synth_input<float>(cfg, 500 + i);
    for (ForwardInput* in : {&real, &synth}) {
      for (double t : {0.0, 0.37, 1.0}) {
        for (bool uncond : {false, true}) {
          in->uncond = uncond;
          Tensor<float> x_t = synth_x<float>(cfg, 600 + n_cases);
          Tensor<float> masked = full_forward(params, *in, x_t, t, nullptr, true);
          Tensor<float> solo =
              backbone_forward(params, in->tar_caption, x_t, in->tar_first, t, uncond);
          ++n_cases;
          if (!value_equal(masked, solo))
            return {false, fmt("masked MoT != backbone at t=%.2f uncond=%d "
                               "(max diff %.2e)",
                               t, uncond ? 1 : 0, max_abs_diff(masked, solo))};
        }
      }
    }
  }
  return {true, fmt("masked MoT == standalone backbone bitwise on %d cases "
                    "(scrambled experts, cond+uncond, t in {0, 0.37, 1})",
                    n_cases)};
}

// ---------------------------------------------------------------------------
// Criterion 4: fused attention against a naive full-score-matrix reference.

// Fully independent multi-head attention: explicit per-element rotations and
// score loops, no shared kernels with the implementation under test.
Tensor<double> naive_attention(const ModelConfig& cfg,
                               const std::vector<TokenPos>& pos,
                               const Tensor<double>& q, const Tensor<double>& k,
                               const Tensor<double>& v) {
  const int n = static_cast<int>(q.rows());
  const int hd = cfg.head_dim;
  auto rotate = [&](const Tensor<double>& m, int row, int head,
                    std::vector<double>& out) {
    const int bands[3] = {cfg.band_t, cfg.band_h, cfg.band_w};
    const int coords[3] = {pos[row].t, pos[row].h, pos[row].w};
    int pair = 0;
    for (int b = 0; b < 3; ++b)
      for (int j = 0; j < bands[b] / 2; ++j, ++pair) {
        const double angle =
            pos[row].text
                ? 0.0
                : coords[b] * std::pow(cfg.rope_base, -2.0 * j / bands[b]);
        const double x0 = m.at(row, head * hd + 2 * pair);
        const double x1 = m.at(row, head * hd + 2 * pair + 1);
        out[2 * pair] = x0 * std::cos(angle) - x1 * std::sin(angle);
        out[2 * pair + 1] = x0 * std::sin(angle) + x1 * std::cos(angle);
      }
  };
  Tensor<double> out({n, cfg.d_model});
  std::vector<double> qi(hd), kj(hd);
  for (int h = 0; h < cfg.n_heads; ++h) {
    for (int i = 0; i < n; ++i) {
      rotate(q, i, h, qi);
      std::vector<double> scores(static_cast<size_t>(n));
      for (int j = 0; j < n; ++j) {
        rotate(k, j, h, kj);
        double dot = 0;
        for (int c = 0; c < hd; ++c) dot += qi[c] * kj[c];
        scores[j] = dot / std::sqrt(static_cast<double>(hd));
      }
      double mx = scores[0];
      for (double s : scores) mx = std::max(mx, s);
      double z = 0;
      for (double& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (int c = 0; c < hd; ++c) {
        double acc = 0;
        for (int j = 0; j < n; ++j) acc += scores[j] / z * v.at(j, h * hd + c);
        out.at(i, h * hd + c) = acc;
      }
    }
  }
  return out;
}

CriterionResult criterion_4() {
  ModelConfig cfg;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    CounterRng rng(900 + trial, 5000);
    const int n = 3 + static_cast<int>(rng.next_below(8));
    std::vector<TokenPos> pos;
    for (int i = 0; i < n; ++i) {
      const bool text = rng.next_below(4) == 0;
      pos.push_back(TokenPos{text, static_cast<int>(rng.next_below(17)) - 8,
                             static_cast<int>(rng.next_below(4)),
                             static_cast<int>(rng.next_below(4))});
    }
    Tensor<double> q = rand_mat<double>(rng.fork(10), n, cfg.d_model);
    Tensor<double> k = rand_mat<double>(rng.fork(11), n, cfg.d_model);
    Tensor<double> v = rand_mat<double>(rng.fork(12), n, cfg.d_model);
    RopeTables<double> tab = make_rope_tables<double>(cfg, pos);
    EagerEngine<double> eng{nullptr, nullptr};
    Tensor<double> fused =
        fwd_detail::attention_rows(eng, cfg, 0, 'f', q, k, v, tab);
    worst = std::max(worst, max_abs_diff(fused, naive_attention(cfg, pos, q, k, v)));
    if (worst >= 1e-5)
      return {false, fmt("trial %d deviates from the naive reference by %.2e",
                         trial, worst)};
  }
  // One case at the real joint-sequence geometry on top of the random draws.
  const std::vector<TokenPos> pos = build_positions(cfg);
  const int n = static_cast<int>(pos.size());
  CounterRng rng(9999, 5000);
  Tensor<double> q = rand_mat<double>(rng.fork(0), n, cfg.d_model);
  Tensor<double> k = rand_mat<double>(rng.fork(1), n, cfg.d_model);
  Tensor<double> v = rand_mat<double>(rng.fork(2), n, cfg.d_model);
  RopeTables<double> tab = make_rope_tables<double>(cfg, pos);
  EagerEngine<double> eng{nullptr, nullptr};
  Tensor<double> fused = fwd_detail::attention_rows(eng, cfg, 0, 'f', q, k, v, tab);
  worst = std::max(worst, max_abs_diff(fused, naive_attention(cfg, pos, q, k, v)));
  if (worst >= 1e-5)
    return {false, fmt("joint-sequence case deviates by %.2e", worst)};
  return {true, fmt("100 seeded cases + full %d-token joint sequence, "
                    "max |fused - naive| = %.1e (tol 1e-5)",
                    n, worst)};
}

// ---------------------------------------------------------------------------
// Criterion 5: rotary-embedding properties.

CriterionResult criterion_5() {
  ModelConfig cfg;
  CounterRng rng(31, 7500);

  // (a) Norm preservation: rotation leaves every 2-plane norm unchanged.
  {
    std::vector<TokenPos> pos;
    for (int i = 0; i < 16; ++i)
      pos.push_back(TokenPos{false, static_cast<int>(rng.next_below(40)) - 20,
                             static_cast<int>(rng.next_below(9)),
                             static_cast<int>(rng.next_below(9))});
    RopeTables<double> tab = make_rope_tables<double>(cfg, pos);
    Tensor<double> x = rand_mat<double>(rng.fork(1), 16, cfg.head_dim);
    Tensor<double> y = rotate_pairs(x, tab.cos, tab.sin);
    double worst = 0.0;
    for (int64_t i = 0; i < 16; ++i)
      for (int64_t p = 0; p < cfg.head_dim / 2; ++p) {
        const double n0 = x.at(i, 2 * p) * x.at(i, 2 * p) +
                          x.at(i, 2 * p + 1) * x.at(i, 2 * p + 1);
        const double n1 = y.at(i, 2 * p) * y.at(i, 2 * p) +
                          y.at(i, 2 * p + 1) * y.at(i, 2 * p + 1);
        worst = std::max(worst, std::abs(n1 - n0));
      }
    if (worst >= 1e-6)
      return {false, fmt("rotation changes a pair norm by %.2e", worst)};
  }

  // (b) Relative-offset dependence: one constant offset per axis applied to
  // every token leaves all logits unchanged; a non-uniform shift does not.
  {
    const int n = 12;
    std::vector<TokenPos> pos, shifted;
    for (int i = 0; i < n; ++i) {
      TokenPos p{false, static_cast<int>(rng.next_below(16)) - 8,
                 static_cast<int>(rng.next_below(4)),
                 static_cast<int>(rng.next_below(4))};
      pos.push_back(p);
      shifted.push_back(TokenPos{false, p.t + 13, p.h + 5, p.w + 9});
    }
    Tensor<double> q = rand_mat<double>(rng.fork(2), n, cfg.head_dim);
    Tensor<double> k = rand_mat<double>(rng.fork(3), n, cfg.head_dim);
    auto logits = [&](const std::vector<TokenPos>& pp) {
      RopeTables<double> t = make_rope_tables<double>(cfg, pp);
      return matmul_nt(rotate_pairs(q, t.cos, t.sin),
                       rotate_pairs(k, t.cos, t.sin));
    };
    Tensor<double> s0 = logits(pos);
    const double uniform_dev = max_abs_diff(s0, logits(shifted));
    if (uniform_dev >= 1e-6)
      return {false, fmt("uniform shift moved a logit by %.2e", uniform_dev)};
    std::vector<TokenPos> broken = pos;
    broken[3].t += 2;
    if (max_abs_diff(s0, logits(broken)) <= 1e-3)
      return {false, "a non-uniform shift should change logits but did not"};
  }

  // (c) Biased vs identical reference PE over the real joint layout: the
  // only rows whose positions differ are the reference video tokens, so
  // within-branch video logits are preserved (uniform temporal shift) while
  // reference-video <-> target logits move. Text rows carry the no-rotation
  // sentinel (no positional index), so mixed text/video pairs are excluded.
  {
    ModelConfig biased = cfg;   // pe = kBiased
    ModelConfig ident = cfg;
    ident.pe = PeVariant::kIdentical;
    const std::vector<TokenPos> pb = build_positions(biased);
    const std::vector<TokenPos> pi = build_positions(ident);
    const int n = static_cast<int>(pb.size());
    Tensor<double> q = rand_mat<double>(rng.fork(4), n, cfg.head_dim);
    Tensor<double> k = rand_mat<double>(rng.fork(5), n, cfg.head_dim);
    auto logits = [&](const std::vector<TokenPos>& pp) {
      RopeTables<double> t = make_rope_tables<double>(cfg, pp);
      return scale(matmul_nt(rotate_pairs(q, t.cos, t.sin),
                             rotate_pairs(k, t.cos, t.sin)),
                   1.0 / std::sqrt(static_cast<double>(cfg.head_dim)));
    };
    Tensor<double> sb = logits(pb);
    Tensor<double> si = logits(pi);
    const int n_text = cfg.caption_len;
    const int n_tar = cfg.n_target_tokens();
    auto is_ref_vid = [&](int r) { return r >= n_text && r < n_tar; };
    auto is_text = [&](int r) { return pb[static_cast<size_t>(r)].text; };
    double within = 0.0, cross = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double d = std::abs(sb.at(i, j) - si.at(i, j));
        const bool ref_i = i < n_tar, ref_j = j < n_tar;
        if (is_text(i) || is_text(j)) {
          if (!is_ref_vid(i) && !is_ref_vid(j))
            within = std::max(within, d);  // text rows never move
          continue;
        }
        if (ref_i == ref_j) within = std::max(within, d);
        else cross = std::max(cross, d);
      }
    if (within >= 1e-6)
      return {false, fmt("within-branch logit moved by %.2e between biased "
                         "and identical PE", within)};
    if (cross <= 1e-3)
      return {false, "cross-branch logits are insensitive to the temporal bias"};
    return {true, fmt("norms preserved, uniform-offset invariance holds "
                      "(tol 1e-6), biased-vs-identical: within-branch dev "
                      "%.1e, cross-branch dev %.2f",
                      within, cross)};
  }
}

// ---------------------------------------------------------------------------
// Criterion 6: frozen partitions are bitwise unchanged after 500 steps.

CriterionResult criterion_6() {
  const Clock::time_point t0 = Clock::now();
  CorpusConfig cc;
  cc.master_seed = 6001;
  std::string detail;
  for (ModelVariant v :
       {ModelVariant::kMot, ModelVariant::kSingleBranchLora,
        ModelVariant::kUnidirCross, ModelVariant::kUnidirAdd}) {
    ModelConfig cfg;
    cfg.variant = v;
    ModelParams params = init_params(cfg, 1700 + static_cast<uint64_t>(v));
    std::vector<std::pair<std::string, Tensor<float>>> frozen;
    for (const std::string& n : params.names)
      if (!params.is_trainable(n)) frozen.emplace_back(n, params.at(n));

    TrainConfig tc;
    tc.lr = 1e-3;
    tc.warmup_steps = 10;
    tc.max_steps = 500;
    tc.batch_size = 1;
    tc.seed = 55;
    tc.variant = v;
    tc.corpus_size = 64;
    FlowConfig fc;  // default cond_drop keeps the null-embedding path live
    AdamState opt = make_adam_state(params);
    train_loop(params, opt, corpus_pool(cc, Split::Train, 64), tc, fc);

    for (const auto& [name, before] : frozen)
      if (!value_equal(params.at(name), before))
        return {false, fmt("%s: frozen %s changed after 500 steps",
                           variant_name(v).c_str(), name.c_str())};
    bool moved = false;
    for (const std::string& n : params.names)
      if (params.is_trainable(n) && n.rfind("expert.", 0) == 0) moved = true;
    (void)moved;
    int changed = 0;
    for (const std::string& n : params.names)
      if (params.is_trainable(n)) ++changed;
    detail += fmt("%s(%zu frozen ok) ", variant_name(v).c_str(), frozen.size());
    (void)changed;
  }
  return {true, fmt("%s- 500 steps each, %.0fs total", detail.c_str(),
                    seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// Criteria 7-10: the empirical runs.

CriterionResult criterion_7(Empirical& emp) {
  emp.ensure_mot2000();
  // Static degenerate baseline: a generation that repeats the target's first
  // frame scores exactly zero against every test pair.
  CorpusConfig cc = emp.make_config(ModelVariant::kMot, 2000, 1).corpus;
  for (int i = 0; i < 4; ++i) {
    PairSample s = corpus_sample(cc, Split::Test, i);
    VideoClip still = s.tar_video;
    const Tensor<float> f0 = frame_of(s.tar_video, 0);
    for (int k = 0; k < static_cast<int>(still.dim(0)); ++k)
      std::copy(f0.data(), f0.data() + f0.numel(), frame_ptr(still, k));
    EvalRecord r = score_sample(s, still);
    if (r.alignment != 0.0)
      return {false, fmt("static baseline scored %.3f on test pair %d",
                         r.alignment, i)};
  }
  int n_pass = 0;
  std::string accs;
  for (uint64_t s : kSeeds) {
    const double a =
        emp.run(ModelVariant::kMot, 2000, s).final_event().accuracy;
    if (a >= 0.8) ++n_pass;
    accs += fmt("s%" PRIu64 "=%.3f ", s, a);
  }
  const bool in_budget = emp.c7_seconds <= 1800.0;
  const bool majority = n_pass >= 2;
  if (!majority)
    return {false, fmt("held-out accuracy %s- only %d/3 seeds reach 0.8",
                       accs.c_str(), n_pass)};
  if (!in_budget)
    return {false, fmt("accuracy ok (%s) but %.0fs exceeds the 30 CPU-minute "
                       "budget", accs.c_str(), emp.c7_seconds)};
  return {true, fmt("held-out accuracy %s(%d/3 seeds >= 0.8), static baseline "
                    "= 0, pretrain + 3 runs in %.0fs <= 1800s",
                    accs.c_str(), n_pass, emp.c7_seconds)};
}

CriterionResult criterion_8(Empirical& emp) {
  double mot = 0.0, add = 0.0;
  for (uint64_t s : kSeeds) {
    mot += emp.run(ModelVariant::kMot, 2000, s).final_event().alignment;
    add += emp.run(ModelVariant::kUnidirAdd, 2000, s).final_event().alignment;
  }
  mot /= 3.0;
  add /= 3.0;
  const bool ok = mot >= add + 10.0;
  return {ok, fmt("mean alignment over 3 seeds: mot %.2f vs unidir_add %.2f "
                  "(gap %.2f, need >= 10)",
                  mot, add, mot - add)};
}

CriterionResult criterion_9(Empirical& emp) {
  double mean[3] = {0, 0, 0};
  const int sizes[3] = {250, 1000, 2000};
  for (int i = 0; i < 3; ++i) {
    for (uint64_t s : kSeeds)
      mean[i] += emp.run(ModelVariant::kMot, sizes[i], s).final_event().alignment;
    mean[i] /= 3.0;
  }
  const bool ok = mean[0] <= mean[1] && mean[1] <= mean[2];
  return {ok, fmt("mean alignment 250->1000->2000 pairs: %.2f -> %.2f -> %.2f "
                  "(%snon-decreasing)",
                  mean[0], mean[1], mean[2], ok ? "" : "NOT ")};
}

// Exact upper-tail binomial p-value: P[X >= k], X ~ Bin(n, p).
double binomial_tail(int n, int k, double p) {
  long double tail = 0.0L;
  for (int i = k; i <= n; ++i) {
    const long double lc = std::lgamma(static_cast<long double>(n) + 1) -
                           std::lgamma(static_cast<long double>(i) + 1) -
                           std::lgamma(static_cast<long double>(n - i) + 1);
    tail += std::exp(lc + i * std::log(static_cast<long double>(p)) +
                     (n - i) * std::log(static_cast<long double>(1.0 - p)));
  }
  return static_cast<double>(std::min(tail, 1.0L));
}

CriterionResult criterion_10(Empirical& emp) {
  const RunResult& base = emp.run(ModelVariant::kMot, 2000, kSeeds[0]);
  LoadedCheckpoint lc = load_checkpoint((base.run_dir / "checkpoint").string());
  const RunConfig cfg = base.config;
  const int n = cfg.corpus.n_zeroshot;
  if (n < 50) return {false, fmt("only %d zero-shot pairs configured", n)};
  const Clock::time_point t0 = Clock::now();
  std::vector<EvalRecord> recs = evaluate_records(
      lc.params, cfg.flow, cfg.corpus, Split::Zeroshot, n, cfg.train.seed);
  int k = 0;
  for (const EvalRecord& r : recs)
    if (r.predicted_semantic == r.true_semantic) ++k;
  const double chance = 1.0 / static_cast<double>(semantic_inventory().size());
  const double acc = static_cast<double>(k) / n;
  const double pval = binomial_tail(n, k, chance);
  const bool ok = acc > chance && pval < 0.05;
  return {ok, fmt("zero-shot %d/%d correct (%.3f vs chance %.4f), binomial "
                  "p = %.2e %s 0.05, %.0fs",
                  k, n, acc, chance, pval, ok ? "<" : ">=", seconds_since(t0))};
}

// ---------------------------------------------------------------------------
// Criterion 11: determinism, round-trips, protocol fuzz.

bool dirs_bitwise_equal(const fs::path& a, const fs::path& b, std::string* why) {
  std::vector<std::string> ra, rb;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file())
      ra.push_back(fs::relative(e.path(), a).string());
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file())
      rb.push_back(fs::relative(e.path(), b).string());
  std::sort(ra.begin(), ra.end());
  std::sort(rb.begin(), rb.end());
  if (ra != rb) {
    *why = "directory listings differ";
    return false;
  }
  for (const std::string& rel : ra)
    if (read_file_bytes((a / rel).string()) != read_file_bytes((b / rel).string())) {
      *why = "file bytes differ: " + rel;
      return false;
    }
  return true;
}

CriterionResult criterion_11(const fs::path& scratch) {
  // Corpus regeneration is bitwise reproducible, in memory and on disk.
  CorpusConfig cc;
  cc.n_train = 12;
  cc.n_test = 6;
  cc.n_zeroshot = 8;
  cc.subject_pool = 64;
  cc.master_seed = 424242;
  std::vector<PairSample> c1 = build_corpus(cc);
  std::vector<PairSample> c2 = build_corpus(cc);
  if (c1.size() != c2.size()) return {false, "corpus size not reproducible"};
  for (size_t i = 0; i < c1.size(); ++i)
    if (!value_equal(c1[i].ref_video, c2[i].ref_video) ||
        !value_equal(c1[i].tar_video, c2[i].tar_video) ||
        c1[i].ref_caption != c2[i].ref_caption ||
        c1[i].semantic.id != c2[i].semantic.id)
      return {false, fmt("regenerated sample %zu differs in memory", i)};
  const fs::path da = scratch / "corpus_a", db = scratch / "corpus_b";
  write_corpus(c1, cc, da.string());
  write_corpus(c2, cc, db.string());
  std::string why;
  if (!dirs_bitwise_equal(da, db, &why))
    return {false, "corpus regeneration: " + why};

  // Checkpoint save -> load -> forward is bitwise.
  ModelConfig mcfg;
  mcfg.variant = ModelVariant::kMot;
  ModelParams params = init_params(mcfg, 1187);
  ForwardInput in = make_forward_input(mcfg, c1[0]);
  Tensor<float> x_t = synth_x<float>(mcfg, 88);
  Tensor<float> before = full_forward(params, in, x_t, 0.4);
  const fs::path ck = scratch / "ckpt";
  save_checkpoint(ck.string(), params, 42, 1187);
  LoadedCheckpoint lc = load_checkpoint(ck.string());
  if (lc.step != 42 || lc.seed != 1187)
    return {false, "checkpoint metadata did not round-trip"};
  for (const std::string& n : params.names)
    if (!value_equal(lc.params.at(n), params.at(n)))
      return {false, "checkpoint tensor differs after round trip: " + n};
  Tensor<float> after = full_forward(lc.params, in, x_t, 0.4);
  if (!value_equal(before, after))
    return {false, "forward after checkpoint round trip is not bitwise"};

  // Seeded sampling is bitwise reproducible (and seed-sensitive).
  FlowConfig fc;
  fc.n_steps = 10;
  fc.cfg_scale = 1.0;
  CounterRng ra = CounterRng(77, kEvalNoiseStream).fork(0);
  CounterRng rb = CounterRng(77, kEvalNoiseStream).fork(0);
  CounterRng rc = CounterRng(78, kEvalNoiseStream).fork(0);
  VideoClip va = sample_video(params, in, fc, ra);
  VideoClip vb = sample_video(params, in, fc, rb);
  VideoClip vc = sample_video(params, in, fc, rc);
  if (!value_equal(va, vb)) return {false, "same-seed sampling is not bitwise"};
  if (value_equal(va, vc)) return {false, "different seeds produced one video"};

  // Judge protocol: >= 100 malformed payloads all rejected (raw retained),
  // every well-formed payload accepted.
  std::vector<std::string> bad = {
      "", "\n", "\n\n", "{\"score\": 73}\n{\"score\": 74}",
      "{\"score\": 73}\n\n", "{\"score\": 73}\r\n", "{\"score\": 73} trailing",
      "{\"score\": 73", "{\"score\": }", "{\"score\": 73.0}",
      "{\"score\": 7.5}", "{\"score\": \"73\"}", "{\"score\": null}",
      "{\"score\": true}", "{\"score\": [73]}", "{\"score\": {\"v\": 73}}",
      "{\"Score\": 73}", "{\"points\": 73}", "{}", "[]", "[73]", "73",
      "\"score: 73\"", "{\"score\": 73, \"reason\": \"good\"}",
      "{\"score\": 1e2}", "{\"score\": +73}", "{\"score\": 073}", "score: 73",
      "{'score': 73}", "{\"score\"= 73}", "null", "true", "NaN",
      "{\"score\": NaN}", "{\"score\": Infinity}", "{\"score\": -0}",
  };
  for (int s : {-1000000, -100, -1, 0, 101, 102, 200, 1000000})
    bad.push_back("{\"score\": " + std::to_string(s) + "}");
  bad.push_back("{\"score\": 4294967397}");
  bad.push_back("{\"score\": 9223372036854775807}");
  CounterRng junk_rng(99, 1234);
  for (int t = 0; t < 64; ++t) {
    std::string junk;
    const int len = 1 + static_cast<int>(junk_rng.next_below(40));
    for (int i = 0; i < len; ++i)
      junk.push_back(static_cast<char>(33 + junk_rng.next_below(94)));
    if (junk.find("{\"score\"") == std::string::npos) bad.push_back(junk);
  }
  if (bad.size() < 100)
    return {false, fmt("fuzz corpus too small: %zu", bad.size())};
  for (const std::string& payload : bad) {
    try {
      (void)judge_response_decode(payload);
      return {false, "malformed payload accepted: " + payload};
    } catch (const ProtocolError& e) {
      if (e.raw != payload)
        return {false, "rejection lost the raw payload: " + payload};
    }
  }
  for (int s = 1; s <= 100; ++s) {
    if (judge_response_decode(judge_response_encode(s)) != s)
      return {false, fmt("well-formed score %d did not round-trip", s)};
    if (judge_response_decode("{\"score\": " + std::to_string(s) + "}\n") != s)
      return {false, fmt("well-formed score %d with newline rejected", s)};
  }
  JudgeRequest req;
  req.ref_path = (scratch / "r.vapt").string();
  req.gen_path = (scratch / "g.vapt").string();
  req.template_id = "general-v1";
  req.criteria = "Regime: NON-ID-TRANSFORM. Semantic: pan_right.";
  const JudgeRequest rt = judge_request_decode(judge_request_encode(req));
  if (rt.ref_path != req.ref_path || rt.criteria != req.criteria)
    return {false, "judge request did not round-trip"};
  CallbackTransport cb([](const std::string& request_bytes) {
    (void)judge_request_decode(request_bytes);  // server-side validation
    return judge_response_encode(42);
  });
  if (judge_score(cb, req) != 42)
    return {false, "transport round trip returned the wrong score"};

  return {true, fmt("corpus regen bitwise (mem+disk), checkpoint round-trip "
                    "bitwise, seeded sampling bitwise, %zu malformed judge "
                    "payloads rejected / all well-formed accepted",
                    bad.size())};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "icvid_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);
  note("scratch directory: " + scratch.string());

  Empirical emp;
  emp.out_dir = scratch / "runs";

  std::vector<std::pair<int, std::function<CriterionResult()>>> criteria = {
      {1, [&] { return criterion_1(); }},
      {2, [&] { return criterion_2(); }},
      {3, [&] { return criterion_3(); }},
      {4, [&] { return criterion_4(); }},
      {5, [&] { return criterion_5(); }},
      {6, [&] { return criterion_6(); }},
      {7, [&] { return criterion_7(emp); }},
      {8, [&] { return criterion_8(emp); }},
      {9, [&] { return criterion_9(emp); }},
      {10, [&] { return criterion_10(emp); }},
      {11, [&] { return criterion_11(scratch); }},
  };

  int failures = 0;
  for (auto& [id, fn] : criteria) {
    CriterionResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    if (!r.pass) ++failures;
    std::printf("criterion %2d %s  %s\n", id, r.pass ? "PASS" : "FAIL",
                r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/11 criteria passed\n", 11 - failures);
  return failures;
}
