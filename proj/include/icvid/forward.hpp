#pragma once

#include <algorithm>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "icvid/autodiff.hpp"
#include "icvid/model.hpp"

// The forward pass, written once as a template over an execution engine.
// EagerEngine evaluates on plain tensors (sampling, evaluation, finite
// differences); TapeEngine evaluates on autodiff variables so the identical
// arithmetic is differentiable. Both rely on the shared free-function op
// vocabulary defined for Tensor<T> and Var<T>.

namespace icvid {

struct PairSample;  // corpus.hpp

// ---------------------------------------------------------------------------
// Inputs and hooks

template <class T>
struct ForwardInputT {
  std::vector<int> ref_caption, tar_caption;
  // Reference rows: content latent channel-concatenated with the reference
  // first-frame latent, [n_video_tokens, 2*patch_channels].
  Tensor<T> ref_pre;
  // Target first-frame latent, [n_video_tokens, patch_channels]; the moving
  // target content (x_t) is supplied per forward call.
  Tensor<T> tar_first;
  // Classifier-free conditioning drop: replaces both captions with the null
  // text row and the embedded reference video rows with the null reference
  // row. The target first frame is never dropped.
  bool uncond = false;
};

using ForwardInput = ForwardInputT<float>;

ForwardInput make_forward_input(const ModelConfig& cfg, const PairSample& sample);

template <class U, class T>
ForwardInputT<U> cast_input(const ForwardInputT<T>& in) {
  ForwardInputT<U> out;
  out.ref_caption = in.ref_caption;
  out.tar_caption = in.tar_caption;
  auto cast = [](const Tensor<T>& v) {
    Tensor<U> c(v.shape());
    for (int64_t i = 0; i < v.numel(); ++i)
      c.data()[i] = static_cast<U>(v.data()[i]);
    return c;
  };
  if (in.ref_pre.numel() > 0) out.ref_pre = cast(in.ref_pre);
  if (in.tar_first.numel() > 0) out.tar_first = cast(in.tar_first);
  out.uncond = in.uncond;
  return out;
}

template <class T>
Tensor<T> cast_tensor(const Tensor<float>& v) {
  Tensor<T> c(v.shape());
  for (int64_t i = 0; i < v.numel(); ++i)
    c.data()[i] = static_cast<T>(v.data()[i]);
  return c;
}

// Attention internals captured by the eager engine, in evaluation order.
// branch: 'f' fused/joint rows, 't' target-only rows, 'r' reference branch,
// 'x' cross-attention.
template <class T>
struct ForwardHooks {
  struct AttnCapture {
    int layer = 0;
    int head = 0;
    char branch = 'f';
    Tensor<T> logits;
    Tensor<T> probs;
  };
  std::vector<AttnCapture> attention;
};

// ---------------------------------------------------------------------------
// Engines

template <class T>
struct EagerEngine {
  using Scalar = T;
  using Mat = Tensor<T>;
  const ParamSetT<T>* params = nullptr;
  ForwardHooks<T>* hooks = nullptr;

  Mat P(const std::string& name) const { return params->at(name); }
  Mat C(Tensor<T> v) const { return v; }
  void probe(int layer, int head, char branch, const Mat& logits,
             const Mat& probs) {
    if (hooks)
      hooks->attention.push_back(
          typename ForwardHooks<T>::AttnCapture{layer, head, branch, logits, probs});
  }
};

template <class T>
struct TapeEngine {
  using Scalar = T;
  using Mat = Var<T>;
  Tape<T>* tape = nullptr;
  const ParamSetT<T>* params = nullptr;
  // Parameter leaves in first-touch order; each named tensor becomes exactly
  // one leaf per tape so gradients accumulate across reuse.
  std::vector<std::pair<std::string, Var<T>>> touched;

  Mat P(const std::string& name) {
    auto it = touched_index_.find(name);
    if (it != touched_index_.end())
      return touched[static_cast<size_t>(it->second)].second;
    Var<T> leaf = make_leaf(*tape, params->at(name));
    touched_index_.emplace(name, static_cast<int>(touched.size()));
    touched.emplace_back(name, leaf);
    return leaf;
  }
  Mat C(Tensor<T> v) { return make_leaf(*tape, std::move(v)); }
  void probe(int, int, char, const Mat&, const Mat&) {}

  std::unordered_map<std::string, int> touched_index_;
};

// ---------------------------------------------------------------------------
// Building blocks

namespace fwd_detail {

template <class E>
struct BlockWeights {
  using Mat = typename E::Mat;
  Mat ln1_g, qkv_w, qkv_b, out_w, out_b, ln2_g, ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class E>
BlockWeights<E> fetch_block(E& eng, const std::string& prefix) {
  return BlockWeights<E>{
      eng.P(prefix + ".ln1.g"),      eng.P(prefix + ".qkv.w"),
      eng.P(prefix + ".qkv.b"),      eng.P(prefix + ".attn_out.w"),
      eng.P(prefix + ".attn_out.b"), eng.P(prefix + ".ln2.g"),
      eng.P(prefix + ".ffn.w1"),     eng.P(prefix + ".ffn.b1"),
      eng.P(prefix + ".ffn.w2"),     eng.P(prefix + ".ffn.b2")};
}

template <class E>
struct LoraWeights {
  using Mat = typename E::Mat;
  Mat qkv_a, qkv_b, ffn1_a, ffn1_b, ffn2_a, ffn2_b;
};

template <class E>
LoraWeights<E> fetch_lora(E& eng, int layer) {
  const std::string prefix = "lora.L" + std::to_string(layer);
  return LoraWeights<E>{eng.P(prefix + ".qkv.a"),  eng.P(prefix + ".qkv.b"),
                        eng.P(prefix + ".ffn1.a"), eng.P(prefix + ".ffn1.b"),
                        eng.P(prefix + ".ffn2.a"), eng.P(prefix + ".ffn2.b")};
}

// Per-layer adaptive modulation chunks, derived from the backbone's time
// embedding and applied identically to every branch of the layer.
template <class E>
struct LayerMod {
  using Mat = typename E::Mat;
  Mat sa, ba, sf, bf;
};

template <class E>
LayerMod<E> fetch_mod(E& eng, const typename E::Mat& e, int layer, int d) {
  const std::string prefix = "backbone.L" + std::to_string(layer) + ".mod";
  typename E::Mat m = add(matmul(e, eng.P(prefix + ".w")), eng.P(prefix + ".b"));
  return LayerMod<E>{slice_cols(m, 0, d), slice_cols(m, d, 2 * d),
                     slice_cols(m, 2 * d, 3 * d), slice_cols(m, 3 * d, 4 * d)};
}

template <class E>
typename E::Mat mod_ln(E&, const typename E::Mat& x, const typename E::Mat& gain,
                       const typename E::Mat& zero_bias,
                       const typename E::Mat& s, const typename E::Mat& b) {
  using T = typename E::Scalar;
  auto y = layer_norm(x, gain, zero_bias);
  return add_rowvec(mul_rowvec(y, add_scalar(s, T(1))), b);
}

// Multi-head self-attention over the rows of q/k/v (already [n, d]); the
// rotary tables must cover the same rows.
template <class E>
typename E::Mat attention_rows(E& eng, const ModelConfig& cfg, int layer,
                               char branch, const typename E::Mat& q,
                               const typename E::Mat& k,
                               const typename E::Mat& v,
                               const RopeTables<typename E::Scalar>& rope) {
  using T = typename E::Scalar;
  using Mat = typename E::Mat;
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(cfg.head_dim));
  std::vector<Mat> heads;
  heads.reserve(static_cast<size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    const int64_t c0 = static_cast<int64_t>(h) * cfg.head_dim;
    const int64_t c1 = c0 + cfg.head_dim;
    Mat qh = rotate_pairs(slice_cols(q, c0, c1), rope.cos, rope.sin);
    Mat kh = rotate_pairs(slice_cols(k, c0, c1), rope.cos, rope.sin);
    Mat vh = slice_cols(v, c0, c1);
    Mat logits = scale(matmul_nt(qh, kh), inv_sqrt);
    Mat probs = softmax_last(logits);
    eng.probe(layer, h, branch, logits, probs);
    heads.push_back(matmul(probs, vh));
  }
  return concat_cols(heads);
}

template <class E>
typename E::Mat qkv_project(const typename E::Mat& h,
                            const BlockWeights<E>& w,
                            const LoraWeights<E>* lora) {
  auto qkv = add_rowvec(matmul(h, w.qkv_w), w.qkv_b);
  if (lora) qkv = add(qkv, matmul(matmul(h, lora->qkv_a), lora->qkv_b));
  return qkv;
}

// Attention sublayer with residual: x + out_proj(attn(qkv(mod_ln(x)))).
template <class E>
typename E::Mat attn_half(E& eng, const ModelConfig& cfg, int layer,
                          char branch, const BlockWeights<E>& w,
                          const LayerMod<E>& m, const typename E::Mat& zb,
                          const typename E::Mat& x,
                          const RopeTables<typename E::Scalar>& rope,
                          const LoraWeights<E>* lora = nullptr) {
  using Mat = typename E::Mat;
  const int d = cfg.d_model;
  Mat h = mod_ln(eng, x, w.ln1_g, zb, m.sa, m.ba);
  Mat qkv = qkv_project<E>(h, w, lora);
  Mat att = attention_rows(eng, cfg, layer, branch, slice_cols(qkv, 0, d),
                           slice_cols(qkv, d, 2 * d),
                           slice_cols(qkv, 2 * d, 3 * d), rope);
  return add(x, add_rowvec(matmul(att, w.out_w), w.out_b));
}

// Feed-forward sublayer with residual.
template <class E>
typename E::Mat ffn_half(E& eng, const BlockWeights<E>& w, const LayerMod<E>& m,
                         const typename E::Mat& zb, const typename E::Mat& x,
                         const LoraWeights<E>* lora = nullptr) {
  using Mat = typename E::Mat;
  Mat h = mod_ln(eng, x, w.ln2_g, zb, m.sf, m.bf);
  Mat f = add_rowvec(matmul(h, w.ffn_w1), w.ffn_b1);
  if (lora) f = add(f, matmul(matmul(h, lora->ffn1_a), lora->ffn1_b));
  Mat a = silu(f);
  Mat y = add_rowvec(matmul(a, w.ffn_w2), w.ffn_b2);
  if (lora) y = add(y, matmul(matmul(a, lora->ffn2_a), lora->ffn2_b));
  return add(x, y);
}

template <class E>
typename E::Mat run_block(E& eng, const ModelConfig& cfg, int layer,
                          char branch, const BlockWeights<E>& w,
                          const LayerMod<E>& m, const typename E::Mat& zb,
                          const typename E::Mat& x,
                          const RopeTables<typename E::Scalar>& rope,
                          const LoraWeights<E>* lora = nullptr) {
  return ffn_half(eng, w, m, zb,
                  attn_half(eng, cfg, layer, branch, w, m, zb, x, rope, lora),
                  lora);
}

// Joint layer: expert weights transform the reference rows, backbone weights
// the target rows; queries/keys/values are concatenated in sequence order
// and attend bidirectionally in one pass.
template <class E>
void fused_layer(E& eng, const ModelConfig& cfg, int layer,
                 const BlockWeights<E>& wb, const BlockWeights<E>& we,
                 const LayerMod<E>& m, const typename E::Mat& zb,
                 typename E::Mat& ref, typename E::Mat& tar,
                 const RopeTables<typename E::Scalar>& rope_full) {
  using Mat = typename E::Mat;
  const int d = cfg.d_model;
  const int64_t n_ref = cfg.n_target_tokens();
  const int64_t n_all = cfg.n_seq_tokens();
  Mat hr = mod_ln(eng, ref, we.ln1_g, zb, m.sa, m.ba);
  Mat ht = mod_ln(eng, tar, wb.ln1_g, zb, m.sa, m.ba);
  Mat qkv = concat_rows(std::vector<Mat>{qkv_project<E>(hr, we, nullptr),
                                         qkv_project<E>(ht, wb, nullptr)});
  Mat att = attention_rows(eng, cfg, layer, 'f', slice_cols(qkv, 0, d),
                           slice_cols(qkv, d, 2 * d),
                           slice_cols(qkv, 2 * d, 3 * d), rope_full);
  Mat att_r = slice_rows(att, 0, n_ref);
  Mat att_t = slice_rows(att, n_ref, n_all);
  ref = add(ref, add_rowvec(matmul(att_r, we.out_w), we.out_b));
  tar = add(tar, add_rowvec(matmul(att_t, wb.out_w), wb.out_b));
  ref = ffn_half(eng, we, m, zb, ref);
  tar = ffn_half(eng, wb, m, zb, tar);
}

// Sinusoidal embedding of the flow time in [0, 1]; cos half then sin half.
template <class T>
Tensor<T> sinusoidal_time(double t, int d) {
  Tensor<T> out({1, d});
  const int half = d / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    const double angle = 1000.0 * t * freq;
    out.data()[i] = static_cast<T>(std::cos(angle));
    out.data()[half + i] = static_cast<T>(std::sin(angle));
  }
  return out;
}

template <class T>
RopeTables<T> slice_tables(const RopeTables<T>& full, int64_t r0, int64_t r1) {
  return RopeTables<T>{slice_rows(full.cos, r0, r1),
                       slice_rows(full.sin, r0, r1)};
}

}  // namespace fwd_detail

// ---------------------------------------------------------------------------
// Forward pass

// Predicted velocity over the target video rows, [n_video_tokens,
// patch_channels]. with_reference=false runs the backbone path over
// [TarText, TarVideo] alone; for the joint variants that is exactly the
// two-branch pass with the reference masked out.
template <class E>
typename E::Mat run_forward(E& eng, const ModelConfig& cfg,
                            const ForwardInputT<typename E::Scalar>& in,
                            const Tensor<typename E::Scalar>& x_t, double t,
                            bool with_reference) {
  using T = typename E::Scalar;
  using Mat = typename E::Mat;
  namespace fd = fwd_detail;
  cfg.validate();
  const int d = cfg.d_model;
  const int64_t n_text = cfg.caption_len;
  const int64_t n_vid = cfg.n_video_tokens();
  const int64_t n_tar = cfg.n_target_tokens();
  const int64_t n_all = cfg.n_seq_tokens();
  const int64_t pc = cfg.patch_channels();

  if (x_t.rank() != 2 || x_t.rows() != n_vid || x_t.cols() != pc)
    throw ShapeError("forward: x_t must be [" + std::to_string(n_vid) + ", " +
                     std::to_string(pc) + "]");
  if (in.tar_first.rank() != 2 || in.tar_first.rows() != n_vid ||
      in.tar_first.cols() != pc)
    throw ShapeError("forward: tar_first must be [" + std::to_string(n_vid) +
                     ", " + std::to_string(pc) + "]");
  if (!in.uncond && static_cast<int64_t>(in.tar_caption.size()) != n_text)
    throw ShapeError("forward: target caption must hold " +
                     std::to_string(n_text) + " tokens");
  if (with_reference && !in.uncond) {
    if (in.ref_pre.rank() != 2 || in.ref_pre.rows() != n_vid ||
        in.ref_pre.cols() != 2 * pc)
      throw ShapeError("forward: ref_pre must be [" + std::to_string(n_vid) +
                       ", " + std::to_string(2 * pc) + "]");
    if (static_cast<int64_t>(in.ref_caption.size()) != n_text)
      throw ShapeError("forward: reference caption must hold " +
                       std::to_string(n_text) + " tokens");
  }

  const Mat zb = eng.C(Tensor<T>({1, d}));

  // Flow-time conditioning.
  Mat emb = eng.C(fd::sinusoidal_time<T>(t, d));
  Mat e = add(matmul(silu(add(matmul(emb, eng.P("backbone.time.w1")),
                              eng.P("backbone.time.b1"))),
                     eng.P("backbone.time.w2")),
              eng.P("backbone.time.b2"));

  // Segments.
  const Mat proj_w = eng.P("backbone.patch_proj.w");
  const Mat proj_b = eng.P("backbone.patch_proj.b");
  Mat tar_txt = in.uncond
                    ? broadcast_row(eng.P("backbone.null_text"), n_text)
                    : gather_rows(eng.P("backbone.caption_embed"), in.tar_caption);
  Mat tar_pre = eng.C(concat_cols(std::vector<Tensor<T>>{x_t, in.tar_first}));
  Mat tar = concat_rows(
      std::vector<Mat>{tar_txt, add_rowvec(matmul(tar_pre, proj_w), proj_b)});
  Mat ref;
  if (with_reference) {
    Mat ref_txt = in.uncond
                      ? broadcast_row(eng.P("backbone.null_text"), n_text)
                      : gather_rows(eng.P("backbone.caption_embed"), in.ref_caption);
    Mat ref_vid =
        in.uncond
            ? broadcast_row(eng.P("cond.null_ref_video"), n_vid)
            : add_rowvec(matmul(eng.C(in.ref_pre), proj_w), proj_b);
    ref = concat_rows(std::vector<Mat>{ref_txt, ref_vid});
  }

  // Rotary tables for the sequence actually being run.
  const std::vector<TokenPos> positions =
      with_reference ? build_positions(cfg) : build_target_positions(cfg);
  const RopeTables<T> rope_full = make_rope_tables<T>(cfg, positions);
  const RopeTables<T> rope_tar =
      with_reference ? fd::slice_tables(rope_full, n_tar, n_all) : rope_full;
  const RopeTables<T> rope_ref =
      with_reference ? fd::slice_tables(rope_full, 0, n_tar) : rope_full;

  switch (cfg.variant) {
    case ModelVariant::kMot: {
      for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const std::string lb = "backbone.L" + std::to_string(layer);
        const fd::BlockWeights<E> wb = fd::fetch_block(eng, lb);
        const fd::LayerMod<E> m = fd::fetch_mod(eng, e, layer, d);
        const bool fused =
            with_reference &&
            std::find(cfg.mot_layers.begin(), cfg.mot_layers.end(), layer) !=
                cfg.mot_layers.end();
        if (fused) {
          const fd::BlockWeights<E> we =
              fd::fetch_block(eng, "expert.L" + std::to_string(layer));
          fd::fused_layer(eng, cfg, layer, wb, we, m, zb, ref, tar, rope_full);
        } else {
          // Reference rows pass through untouched on non-expert layers.
          tar = fd::run_block(eng, cfg, layer, 't', wb, m, zb, tar, rope_tar);
        }
      }
      break;
    }
    case ModelVariant::kSingleBranch:
    case ModelVariant::kSingleBranchLora: {
      const bool lora = cfg.variant == ModelVariant::kSingleBranchLora;
      Mat x = with_reference ? concat_rows(std::vector<Mat>{ref, tar}) : tar;
      const RopeTables<T>& rope = with_reference ? rope_full : rope_tar;
      for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const fd::BlockWeights<E> wb =
            fd::fetch_block(eng, "backbone.L" + std::to_string(layer));
        const fd::LayerMod<E> m = fd::fetch_mod(eng, e, layer, d);
        const fd::LoraWeights<E> lw =
            lora ? fd::fetch_lora(eng, layer) : fd::LoraWeights<E>{};
        x = fd::run_block(eng, cfg, layer, with_reference ? 'f' : 't', wb, m,
                          zb, x, rope, lora ? &lw : nullptr);
      }
      tar = with_reference ? slice_rows(x, n_tar, n_all) : x;
      break;
    }
    case ModelVariant::kUnidirCross:
    case ModelVariant::kUnidirAdd: {
      const bool cross = cfg.variant == ModelVariant::kUnidirCross;
      for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const std::string ls = std::to_string(layer);
        const fd::BlockWeights<E> wb = fd::fetch_block(eng, "backbone.L" + ls);
        const fd::LayerMod<E> m = fd::fetch_mod(eng, e, layer, d);
        if (with_reference) {
          const fd::BlockWeights<E> we = fd::fetch_block(eng, "expert.L" + ls);
          ref = fd::run_block(eng, cfg, layer, 'r', we, m, zb, ref, rope_ref);
        }
        tar = fd::attn_half(eng, cfg, layer, 't', wb, m, zb, tar, rope_tar);
        if (with_reference && cross) {
          // Single-head cross-attention from target rows into the reference
          // branch output; zero-initialized output map.
          Mat q = matmul(tar, eng.P("cross.L" + ls + ".q.w"));
          Mat k = matmul(ref, eng.P("cross.L" + ls + ".k.w"));
          Mat v = matmul(ref, eng.P("cross.L" + ls + ".v.w"));
          Mat logits = scale(matmul_nt(q, k), T(1) / std::sqrt(static_cast<T>(d)));
          Mat probs = softmax_last(logits);
          eng.probe(layer, 0, 'x', logits, probs);
          tar = add(tar, add_rowvec(matmul(matmul(probs, v),
                                           eng.P("cross.L" + ls + ".o.w")),
                                    eng.P("cross.L" + ls + ".o.b")));
        } else if (with_reference && !cross) {
          // Mean-pooled reference summary, mapped through a zero-initialized
          // projection and broadcast-added to every target row.
          Mat inj = add(matmul(mean_rows(ref), eng.P("add.L" + ls + ".w")),
                        eng.P("add.L" + ls + ".b"));
          tar = add_rowvec(tar, inj);
        }
        tar = fd::ffn_half(eng, wb, m, zb, tar);
      }
      break;
    }
  }

  Mat y = layer_norm(slice_rows(tar, n_text, n_tar),
                     eng.P("backbone.final_ln.g"), zb);
  return add_rowvec(matmul(y, eng.P("backbone.head.w")),
                    eng.P("backbone.head.b"));
}

// ---------------------------------------------------------------------------
// Public entry points

template <class T>
Tensor<T> full_forward(const ParamSetT<T>& params, const ForwardInputT<T>& in,
                       const Tensor<T>& x_t, double t,
                       ForwardHooks<std::type_identity_t<T>>* hooks = nullptr,
                       bool mask_reference = false) {
  EagerEngine<T> eng{&params, hooks};
  return run_forward(eng, params.config, in, x_t, t, !mask_reference);
}

template <class T>
Tensor<T> backbone_forward(const ParamSetT<T>& params,
                           const std::vector<int>& caption,
                           const Tensor<T>& x_t, const Tensor<T>& first,
                           double t, bool uncond_text = false,
                           ForwardHooks<std::type_identity_t<T>>* hooks = nullptr) {
  ForwardInputT<T> in;
  in.tar_caption = caption;
  in.tar_first = first;
  in.uncond = uncond_text;
  EagerEngine<T> eng{&params, hooks};
  return run_forward(eng, params.config, in, x_t, t, false);
}

// Differentiable losses. The returned leaves cover every parameter touched
// by the pass, in first-touch order; callers select the trainable subset.
template <class T>
struct TapeLoss {
  Var<T> loss;
  std::vector<std::pair<std::string, Var<T>>> leaves;
};

template <class T>
TapeLoss<T> training_loss(Tape<T>& tape, const ParamSetT<T>& params,
                          const ForwardInputT<T>& in, const Tensor<T>& x_t,
                          double t, const Tensor<T>& v_target) {
  TapeEngine<T> eng{&tape, &params};
  Var<T> pred = run_forward(eng, params.config, in, x_t, t, true);
  Var<T> loss = mse(pred, make_leaf(tape, v_target));
  return TapeLoss<T>{loss, std::move(eng.touched)};
}

template <class T>
TapeLoss<T> pretrain_loss(Tape<T>& tape, const ParamSetT<T>& params,
                          const std::vector<int>& caption, const Tensor<T>& x_t,
                          const Tensor<T>& first, double t,
                          const Tensor<T>& v_target, bool uncond_text) {
  ForwardInputT<T> in;
  in.tar_caption = caption;
  in.tar_first = first;
  in.uncond = uncond_text;
  TapeEngine<T> eng{&tape, &params};
  Var<T> pred = run_forward(eng, params.config, in, x_t, t, false);
  Var<T> loss = mse(pred, make_leaf(tape, v_target));
  return TapeLoss<T>{loss, std::move(eng.touched)};
}

}  // namespace icvid
