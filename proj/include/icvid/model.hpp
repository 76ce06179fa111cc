#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "icvid/errors.hpp"
#include "icvid/tensor.hpp"
#include "icvid/video.hpp"

// Conditional video transformer: a frozen text+video backbone plus a set of
// adaptation variants that condition generation on a reference clip.
//
// The token sequence is laid out as
//   [RefText, RefVideo, TarText, TarVideo]
// for the joint variants, and [TarText, TarVideo] for the backbone alone.
// Video tokens are non-overlapping space-time patches; the per-token channel
// vector additionally carries the (clean) first-frame patch so every variant
// is first-frame conditioned.
//
// Everything below is sized for desk-scale experiments; shapes are derived
// from ModelConfig so tests run the same code path at tiny widths.

namespace icvid {

// ---------------------------------------------------------------------------
// Configuration

enum class ModelVariant {
  kMot,              // frozen backbone + trainable expert branch, joint attention
  kSingleBranch,     // one branch over the full sequence, everything trainable
  kSingleBranchLora, // frozen single branch + low-rank adapters
  kUnidirCross,      // frozen backbone + ref encoder + per-layer cross-attention
  kUnidirAdd,        // frozen backbone + ref encoder + pooled additive injection
};

enum class PeVariant {
  kBiased,      // reference temporal indices shifted to [-delta, -delta + n')
  kIdentical,   // reference shares the target's temporal indices
  kNegShiftTw,  // biased, plus reference width indices shifted to [-w', 0)
};

std::string variant_name(ModelVariant v);
ModelVariant variant_from_name(const std::string& name);
std::string pe_variant_name(PeVariant v);
PeVariant pe_variant_from_name(const std::string& name);

// Named layer subsets for the expert branch, specified in 1-based layer
// numbering ("odd" means layers 1, 3, ... counting from 1) and returned as
// 0-based indices: all, first_half, first_last, odd, odd_le_half.
std::vector<int> layer_set_preset(const std::string& name, int n_layers);

struct ModelConfig {
  ModelVariant variant = ModelVariant::kMot;
  PeVariant pe = PeVariant::kBiased;

  // Transformer width.
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int head_dim = 16;
  int ffn_mult = 4;

  // Rotary bands over (t, h, w); must be even and sum to head_dim. Text
  // tokens are never rotated.
  int band_t = 8;
  int band_h = 4;
  int band_w = 4;
  double rope_base = 10000.0;
  // Temporal offset of the reference clip for the biased variants.
  int temporal_shift = 8;

  // Clip geometry and patching.
  int n_frames = 8;
  int frame_h = 16;
  int frame_w = 16;
  int channels = 3;
  int patch_t = 1;
  int patch_h = 4;
  int patch_w = 4;

  int caption_len = 16;
  int caption_vocab = 53;

  // Layers carrying the expert branch (0-based, sorted, unique). Only used
  // by the kMot variant; the unidirectional variants adapt every layer.
  std::vector<int> mot_layers = {0, 1, 2, 3};
  int lora_rank = 4;

  // Derived sizes.
  int tokens_t() const { return n_frames / patch_t; }
  int tokens_h() const { return frame_h / patch_h; }
  int tokens_w() const { return frame_w / patch_w; }
  int n_video_tokens() const { return tokens_t() * tokens_h() * tokens_w(); }
  int patch_channels() const { return channels * patch_t * patch_h * patch_w; }
  int in_channels() const { return 2 * patch_channels(); }
  int d_ffn() const { return ffn_mult * d_model; }
  int n_target_tokens() const { return caption_len + n_video_tokens(); }
  int n_seq_tokens() const { return 2 * n_target_tokens(); }

  // Throws UsageError on any inconsistent setting.
  void validate() const;
};

// Small widths for exhaustive finite-difference checks (~seconds per run).
ModelConfig gradcheck_tiny_config();

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

// ---------------------------------------------------------------------------
// Parameters

// Flat, name-addressed parameter store. Iteration order is the construction
// order of init_params, which is deterministic for a given config.
template <class T>
struct ParamSetT {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Tensor<T>> values;
  std::vector<char> trainable;

  void add(const std::string& name, Tensor<T> value, bool is_trainable) {
    if (index_.count(name))
      throw UsageError("duplicate parameter name: " + name);
    index_.emplace(name, static_cast<int>(names.size()));
    names.push_back(name);
    values.push_back(std::move(value));
    trainable.push_back(is_trainable ? 1 : 0);
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  int id(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw UsageError("unknown parameter name: " + name);
    return it->second;
  }

  Tensor<T>& at(const std::string& name) { return values[static_cast<size_t>(id(name))]; }
  const Tensor<T>& at(const std::string& name) const {
    return values[static_cast<size_t>(id(name))];
  }
  bool is_trainable(const std::string& name) const {
    return trainable[static_cast<size_t>(id(name))] != 0;
  }

  int64_t n_scalars() const {
    int64_t n = 0;
    for (const Tensor<T>& v : values) n += v.numel();
    return n;
  }
  int64_t n_trainable_scalars() const {
    int64_t n = 0;
    for (size_t i = 0; i < values.size(); ++i)
      if (trainable[i]) n += values[i].numel();
    return n;
  }

 private:
  std::unordered_map<std::string, int> index_;
};

using ModelParams = ParamSetT<float>;

template <class U, class T>
ParamSetT<U> cast_params(const ParamSetT<T>& src) {
  ParamSetT<U> dst;
  dst.config = src.config;
  for (size_t i = 0; i < src.names.size(); ++i) {
    const Tensor<T>& v = src.values[i];
    Tensor<U> c(v.shape());
    for (int64_t k = 0; k < v.numel(); ++k)
      c.data()[k] = static_cast<U>(v.data()[k]);
    dst.add(src.names[i], std::move(c), src.trainable[i] != 0);
  }
  return dst;
}

// Fresh parameters for the given variant. Weights are N(0, 1/sqrt(fan_in)),
// gains 1, biases 0; modulation projections, LoRA up-projections, and the
// injection output maps start at exactly zero so each adapter is initially a
// no-op around the backbone.
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

// Copies all backbone.* tensors from a pretrained set (shapes must agree)
// and re-seeds every expert block as a copy of its backbone layer.
void seed_from_backbone(ModelParams& params, const ModelParams& pretrained);

// ---------------------------------------------------------------------------
// Patch tokenizer

// [n_frames, h, w, c] clip -> [n_video_tokens, patch_channels] rows, token
// order t-major then patch row then patch column; channel order within a
// token is (dt, dy, dx, c) row-major. Throws ShapeError naming the offending
// axis when a clip dimension is not divisible by its patch size.
Tensor<float> encode_video_pre(const VideoClip& clip, const ModelConfig& cfg);

// Exact inverse of encode_video_pre up to the final clamp to [0, 1].
VideoClip decode_video(const Tensor<float>& tokens, const ModelConfig& cfg);

// First-frame conditioning rows: token (t, i, j) carries the frame-0 patch
// at (i, j) for every t, so the conditioning is constant along time.
Tensor<float> encode_first_frame(const VideoClip& clip, const ModelConfig& cfg);

// Channel-concatenates content rows with conditioning rows -> [n, 2C].
Tensor<float> inject_first_frame(const Tensor<float>& content,
                                 const Tensor<float>& first);

// ---------------------------------------------------------------------------
// Positions and rotary tables

struct TokenPos {
  bool text = false;  // text tokens are not rotated
  int t = 0, h = 0, w = 0;
};

// Positions for [RefText, RefVideo, TarText, TarVideo] under cfg.pe. The
// target block always spans t in [0, tokens_t); the reference block depends
// on the variant (see PeVariant).
std::vector<TokenPos> build_positions(const ModelConfig& cfg);

// Positions for [TarText, TarVideo] alone; equals the tail of
// build_positions for every pe variant.
std::vector<TokenPos> build_target_positions(const ModelConfig& cfg);

template <class T>
struct RopeTables {
  Tensor<T> cos;  // [n_tokens, head_dim/2]
  Tensor<T> sin;
};

// Per-token rotation tables shared by all heads. Pair j of band b rotates by
// angle coord * base^(-2j/b); text rows get cos=1, sin=0 (identity).
template <class T>
RopeTables<T> make_rope_tables(const ModelConfig& cfg,
                               const std::vector<TokenPos>& positions) {
  const int half = cfg.head_dim / 2;
  const int n = static_cast<int>(positions.size());
  RopeTables<T> out{Tensor<T>({n, half}), Tensor<T>({n, half})};
  const int bands[3] = {cfg.band_t, cfg.band_h, cfg.band_w};
  for (int i = 0; i < n; ++i) {
    T* crow = out.cos.data() + static_cast<int64_t>(i) * half;
    T* srow = out.sin.data() + static_cast<int64_t>(i) * half;
    const int coords[3] = {positions[i].t, positions[i].h, positions[i].w};
    int col = 0;
    for (int b = 0; b < 3; ++b) {
      for (int j = 0; j < bands[b] / 2; ++j, ++col) {
        if (positions[i].text) {
          crow[col] = T(1);
          srow[col] = T(0);
          continue;
        }
        const double theta =
            std::pow(cfg.rope_base, -2.0 * j / static_cast<double>(bands[b]));
        const double angle = coords[b] * theta;
        crow[col] = static_cast<T>(std::cos(angle));
        srow[col] = static_cast<T>(std::sin(angle));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

// Directory layout: manifest.json (config, step, seed, tensor table with
// content hashes) plus one container file per tensor. load verifies hashes
// and shapes and throws DataError on any mismatch.
void save_checkpoint(const std::string& dir, const ModelParams& params,
                     int64_t step, uint64_t seed);

struct LoadedCheckpoint {
  ModelParams params;
  int64_t step = 0;
  uint64_t seed = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace icvid
