#include "icvid/model.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "icvid/corpus.hpp"
#include "icvid/forward.hpp"
#include "icvid/rng.hpp"
#include "icvid/tensor_io.hpp"

#include "json.hpp"

namespace icvid {

namespace {

using nlohmann::json;

}  // namespace

// ---------------------------------------------------------------------------
// Names and presets

std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::kMot: return "mot";
    case ModelVariant::kSingleBranch: return "single_branch";
    case ModelVariant::kSingleBranchLora: return "single_branch_lora";
    case ModelVariant::kUnidirCross: return "unidir_cross";
    case ModelVariant::kUnidirAdd: return "unidir_add";
  }
  throw UsageError("unhandled model variant");
}

ModelVariant variant_from_name(const std::string& name) {
  if (name == "mot") return ModelVariant::kMot;
  if (name == "single_branch") return ModelVariant::kSingleBranch;
  if (name == "single_branch_lora") return ModelVariant::kSingleBranchLora;
  if (name == "unidir_cross") return ModelVariant::kUnidirCross;
  if (name == "unidir_add") return ModelVariant::kUnidirAdd;
  throw UsageError("unknown model variant '" + name +
                   "' (expected mot, single_branch, single_branch_lora, "
                   "unidir_cross, or unidir_add)");
}

std::string pe_variant_name(PeVariant v) {
  switch (v) {
    case PeVariant::kBiased: return "biased";
    case PeVariant::kIdentical: return "identical";
    case PeVariant::kNegShiftTw: return "neg_shift_tw";
  }
  throw UsageError("unhandled pe variant");
}

PeVariant pe_variant_from_name(const std::string& name) {
  if (name == "biased") return PeVariant::kBiased;
  if (name == "identical") return PeVariant::kIdentical;
  if (name == "neg_shift_tw") return PeVariant::kNegShiftTw;
  throw UsageError("unknown pe variant '" + name +
                   "' (expected biased, identical, or neg_shift_tw)");
}

std::vector<int> layer_set_preset(const std::string& name, int n_layers) {
  if (n_layers < 1)
    throw UsageError("layer_set_preset: n_layers must be positive");
  std::vector<int> out;
  if (name == "all") {
    for (int i = 0; i < n_layers; ++i) out.push_back(i);
  } else if (name == "first_half") {
    for (int i = 0; i < n_layers / 2; ++i) out.push_back(i);
  } else if (name == "first_last") {
    out.push_back(0);
    if (n_layers > 1) out.push_back(n_layers - 1);
  } else if (name == "odd") {
    for (int layer1 = 1; layer1 <= n_layers; layer1 += 2)
      out.push_back(layer1 - 1);
  } else if (name == "odd_le_half") {
    for (int layer1 = 1; layer1 <= n_layers / 2; layer1 += 2)
      out.push_back(layer1 - 1);
  } else {
    throw UsageError("unknown layer set preset '" + name +
                     "' (expected all, first_half, first_last, odd, or "
                     "odd_le_half)");
  }
  if (out.empty())
    throw UsageError("layer set preset '" + name + "' is empty at n_layers " +
                     std::to_string(n_layers));
  return out;
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw UsageError("model config: " + msg); };
  if (n_layers < 1) fail("n_layers must be positive");
  if (d_model < 1 || n_heads < 1 || head_dim < 1)
    fail("d_model, n_heads, and head_dim must be positive");
  if (d_model != n_heads * head_dim)
    fail("d_model " + std::to_string(d_model) + " must equal n_heads*head_dim " +
         std::to_string(n_heads * head_dim));
  if (ffn_mult < 1) fail("ffn_mult must be positive");
  const int bands[3] = {band_t, band_h, band_w};
  const char* band_names[3] = {"band_t", "band_h", "band_w"};
  for (int i = 0; i < 3; ++i) {
    if (bands[i] < 2 || bands[i] % 2 != 0)
      fail(std::string(band_names[i]) + " must be a positive even number, got " +
           std::to_string(bands[i]));
  }
  if (band_t + band_h + band_w != head_dim)
    fail("rotary bands must sum to head_dim " + std::to_string(head_dim) +
         ", got " + std::to_string(band_t + band_h + band_w));
  if (rope_base <= 1.0) fail("rope_base must exceed 1");
  if (n_frames < 1 || frame_h < 1 || frame_w < 1 || channels < 1)
    fail("clip dimensions must be positive");
  if (patch_t < 1 || patch_h < 1 || patch_w < 1)
    fail("patch dimensions must be positive");
  if (n_frames % patch_t != 0)
    fail("n_frames " + std::to_string(n_frames) + " not divisible by patch_t " +
         std::to_string(patch_t));
  if (frame_h % patch_h != 0)
    fail("frame_h " + std::to_string(frame_h) + " not divisible by patch_h " +
         std::to_string(patch_h));
  if (frame_w % patch_w != 0)
    fail("frame_w " + std::to_string(frame_w) + " not divisible by patch_w " +
         std::to_string(patch_w));
  if (caption_len < 1) fail("caption_len must be positive");
  if (caption_vocab < 1) fail("caption_vocab must be positive");
  if (lora_rank < 1) fail("lora_rank must be positive");
  if (pe == PeVariant::kBiased || pe == PeVariant::kNegShiftTw) {
    if (temporal_shift < tokens_t())
      fail("temporal_shift " + std::to_string(temporal_shift) +
           " must be >= tokens_t " + std::to_string(tokens_t()) +
           " so reference temporal indices stay negative");
  }
  if (mot_layers.empty()) fail("mot_layers must not be empty");
  for (size_t i = 0; i < mot_layers.size(); ++i) {
    if (mot_layers[i] < 0 || mot_layers[i] >= n_layers)
      fail("mot_layers entry " + std::to_string(mot_layers[i]) +
           " out of range [0, " + std::to_string(n_layers) + ")");
    if (i > 0 && mot_layers[i] <= mot_layers[i - 1])
      fail("mot_layers must be strictly increasing");
  }
}

ModelConfig gradcheck_tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.head_dim = 8;
  cfg.band_t = 4;
  cfg.band_h = 2;
  cfg.band_w = 2;
  cfg.temporal_shift = 2;
  cfg.n_frames = 2;
  cfg.frame_h = 4;
  cfg.frame_w = 4;
  cfg.patch_t = 1;
  cfg.patch_h = 2;
  cfg.patch_w = 2;
  cfg.caption_len = 4;
  cfg.mot_layers = {0, 1};
  cfg.lora_rank = 2;
  cfg.validate();
  return cfg;
}

std::string model_config_to_json(const ModelConfig& cfg) {
  json j;
  j["variant"] = variant_name(cfg.variant);
  j["pe"] = pe_variant_name(cfg.pe);
  j["n_layers"] = cfg.n_layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["head_dim"] = cfg.head_dim;
  j["ffn_mult"] = cfg.ffn_mult;
  j["band_t"] = cfg.band_t;
  j["band_h"] = cfg.band_h;
  j["band_w"] = cfg.band_w;
  j["rope_base"] = cfg.rope_base;
  j["temporal_shift"] = cfg.temporal_shift;
  j["n_frames"] = cfg.n_frames;
  j["frame_h"] = cfg.frame_h;
  j["frame_w"] = cfg.frame_w;
  j["channels"] = cfg.channels;
  j["patch_t"] = cfg.patch_t;
  j["patch_h"] = cfg.patch_h;
  j["patch_w"] = cfg.patch_w;
  j["caption_len"] = cfg.caption_len;
  j["caption_vocab"] = cfg.caption_vocab;
  j["mot_layers"] = cfg.mot_layers;
  j["lora_rank"] = cfg.lora_rank;
  return j.dump(2) + "\n";
}

ModelConfig model_config_from_json(const std::string& json_text) {
  ModelConfig cfg;
  try {
    json j = json::parse(json_text);
    cfg.variant = variant_from_name(j.at("variant").get<std::string>());
    cfg.pe = pe_variant_from_name(j.at("pe").get<std::string>());
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.ffn_mult = j.at("ffn_mult").get<int>();
    cfg.band_t = j.at("band_t").get<int>();
    cfg.band_h = j.at("band_h").get<int>();
    cfg.band_w = j.at("band_w").get<int>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.temporal_shift = j.at("temporal_shift").get<int>();
    cfg.n_frames = j.at("n_frames").get<int>();
    cfg.frame_h = j.at("frame_h").get<int>();
    cfg.frame_w = j.at("frame_w").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.patch_t = j.at("patch_t").get<int>();
    cfg.patch_h = j.at("patch_h").get<int>();
    cfg.patch_w = j.at("patch_w").get<int>();
    cfg.caption_len = j.at("caption_len").get<int>();
    cfg.caption_vocab = j.at("caption_vocab").get<int>();
    cfg.mot_layers = j.at("mot_layers").get<std::vector<int>>();
    cfg.lora_rank = j.at("lora_rank").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("model config JSON is malformed: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

// Tensor suffixes of one transformer block, shared by backbone and expert.
// The expert carries no modulation projection; it reuses the backbone's.
const char* kBlockFields[] = {"ln1.g",  "qkv.w",  "qkv.b",  "attn_out.w",
                              "attn_out.b", "ln2.g", "ffn.w1", "ffn.b1",
                              "ffn.w2", "ffn.b2"};

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

bool is_param_trainable(ModelVariant variant, const std::string& name) {
  if (variant == ModelVariant::kSingleBranch) return true;
  if (name == "cond.null_ref_video") return true;
  switch (variant) {
    case ModelVariant::kMot:
      return starts_with(name, "expert.");
    case ModelVariant::kSingleBranchLora:
      return starts_with(name, "lora.");
    case ModelVariant::kUnidirCross:
      return starts_with(name, "expert.") || starts_with(name, "cross.");
    case ModelVariant::kUnidirAdd:
      return starts_with(name, "expert.") || starts_with(name, "add.");
    default:
      return false;
  }
}

struct ParamBuilder {
  ModelParams& p;
  CounterRng rng;
  uint64_t next_fork = 0;

  void random(const std::string& name, int64_t rows, int64_t cols,
              int64_t fan_in) {
    CounterRng r = rng.fork(next_fork++);
    Tensor<float> v({rows, cols});
    const float s = 1.0f / std::sqrt(static_cast<float>(fan_in));
    for (int64_t i = 0; i < v.numel(); ++i)
      v.data()[i] = static_cast<float>(r.next_gaussian()) * s;
    p.add(name, std::move(v), is_param_trainable(p.config.variant, name));
  }
  void zeros(const std::string& name, int64_t rows, int64_t cols) {
    p.add(name, Tensor<float>({rows, cols}),
          is_param_trainable(p.config.variant, name));
  }
  void ones(const std::string& name, int64_t rows, int64_t cols) {
    Tensor<float> v({rows, cols});
    for (int64_t i = 0; i < v.numel(); ++i) v.data()[i] = 1.0f;
    p.add(name, std::move(v), is_param_trainable(p.config.variant, name));
  }
  void copy_of(const std::string& name, const std::string& src) {
    p.add(name, Tensor<float>(p.at(src)),
          is_param_trainable(p.config.variant, name));
  }
};

void add_block_params(ParamBuilder& b, const std::string& prefix,
                      const ModelConfig& cfg) {
  const int d = cfg.d_model, f = cfg.d_ffn();
  b.ones(prefix + ".ln1.g", 1, d);
  b.random(prefix + ".qkv.w", d, 3 * d, d);
  b.zeros(prefix + ".qkv.b", 1, 3 * d);
  b.random(prefix + ".attn_out.w", d, d, d);
  b.zeros(prefix + ".attn_out.b", 1, d);
  b.ones(prefix + ".ln2.g", 1, d);
  b.random(prefix + ".ffn.w1", d, f, d);
  b.zeros(prefix + ".ffn.b1", 1, f);
  b.random(prefix + ".ffn.w2", f, d, f);
  b.zeros(prefix + ".ffn.b2", 1, d);
}

}  // namespace

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  ParamBuilder b{p, CounterRng(seed, 701)};
  const int d = cfg.d_model, c2 = cfg.in_channels(), c = cfg.patch_channels();

  b.random("backbone.patch_proj.w", c2, d, c2);
  b.zeros("backbone.patch_proj.b", 1, d);
  b.random("backbone.caption_embed", cfg.caption_vocab, d, d);
  b.random("backbone.time.w1", d, d, d);
  b.zeros("backbone.time.b1", 1, d);
  b.random("backbone.time.w2", d, d, d);
  b.zeros("backbone.time.b2", 1, d);
  b.random("backbone.null_text", 1, d, d);
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string prefix = "backbone.L" + std::to_string(i);
    add_block_params(b, prefix, cfg);
    // Modulation starts at zero: identity scale/shift until trained.
    b.zeros(prefix + ".mod.w", d, 4 * d);
    b.zeros(prefix + ".mod.b", 1, 4 * d);
  }
  b.ones("backbone.final_ln.g", 1, d);
  b.random("backbone.head.w", d, c, d);
  b.zeros("backbone.head.b", 1, c);
  b.random("cond.null_ref_video", 1, d, d);

  auto copy_block = [&](const std::string& dst, const std::string& src) {
    for (const char* field : kBlockFields)
      b.copy_of(dst + "." + std::string(field), src + "." + std::string(field));
  };

  switch (cfg.variant) {
    case ModelVariant::kSingleBranch:
      break;
    case ModelVariant::kMot:
      for (int i : cfg.mot_layers)
        copy_block("expert.L" + std::to_string(i),
                   "backbone.L" + std::to_string(i));
      break;
    case ModelVariant::kSingleBranchLora:
      for (int i = 0; i < cfg.n_layers; ++i) {
        const std::string prefix = "lora.L" + std::to_string(i);
        const int r = cfg.lora_rank, f = cfg.d_ffn();
        b.random(prefix + ".qkv.a", d, r, d);
        b.zeros(prefix + ".qkv.b", r, 3 * d);
        b.random(prefix + ".ffn1.a", d, r, d);
        b.zeros(prefix + ".ffn1.b", r, f);
        b.random(prefix + ".ffn2.a", f, r, f);
        b.zeros(prefix + ".ffn2.b", r, d);
      }
      break;
    case ModelVariant::kUnidirCross:
      for (int i = 0; i < cfg.n_layers; ++i) {
        copy_block("expert.L" + std::to_string(i),
                   "backbone.L" + std::to_string(i));
        const std::string prefix = "cross.L" + std::to_string(i);
        b.random(prefix + ".q.w", d, d, d);
        b.random(prefix + ".k.w", d, d, d);
        b.random(prefix + ".v.w", d, d, d);
        // Zero output map: the cross path starts as a no-op.
        b.zeros(prefix + ".o.w", d, d);
        b.zeros(prefix + ".o.b", 1, d);
      }
      break;
    case ModelVariant::kUnidirAdd:
      for (int i = 0; i < cfg.n_layers; ++i) {
        copy_block("expert.L" + std::to_string(i),
                   "backbone.L" + std::to_string(i));
        const std::string prefix = "add.L" + std::to_string(i);
        b.zeros(prefix + ".w", d, d);
        b.zeros(prefix + ".b", 1, d);
      }
      break;
  }
  return p;
}

void seed_from_backbone(ModelParams& params, const ModelParams& pretrained) {
  for (const std::string& name : pretrained.names) {
    if (!starts_with(name, "backbone.")) continue;
    if (!params.has(name))
      throw UsageError("seed_from_backbone: destination lacks " + name);
    Tensor<float>& dst = params.at(name);
    const Tensor<float>& src = pretrained.at(name);
    if (dst.shape() != src.shape())
      throw ShapeError("seed_from_backbone: shape mismatch on " + name);
    dst = src;
  }
  for (const std::string& name : params.names) {
    if (!starts_with(name, "expert.")) continue;
    const std::string src = "backbone." + name.substr(7);
    params.at(name) = params.at(src);
  }
}

// ---------------------------------------------------------------------------
// Patch tokenizer

namespace {

void check_clip_shape(const VideoClip& clip, const ModelConfig& cfg,
                      const char* what) {
  if (clip.shape().size() != 4)
    throw ShapeError(std::string(what) + ": expected a [frames, h, w, c] clip");
  const auto& s = clip.shape();
  if (s[3] != cfg.channels)
    throw ShapeError(std::string(what) + ": channels " + std::to_string(s[3]) +
                     " does not match config channels " +
                     std::to_string(cfg.channels));
  if (s[0] % cfg.patch_t != 0)
    throw ShapeError(std::string(what) + ": frames " + std::to_string(s[0]) +
                     " not divisible by patch_t " + std::to_string(cfg.patch_t));
  if (s[1] % cfg.patch_h != 0)
    throw ShapeError(std::string(what) + ": height " + std::to_string(s[1]) +
                     " not divisible by patch_h " + std::to_string(cfg.patch_h));
  if (s[2] % cfg.patch_w != 0)
    throw ShapeError(std::string(what) + ": width " + std::to_string(s[2]) +
                     " not divisible by patch_w " + std::to_string(cfg.patch_w));
}

}  // namespace

Tensor<float> encode_video_pre(const VideoClip& clip, const ModelConfig& cfg) {
  check_clip_shape(clip, cfg, "encode_video_pre");
  const auto& s = clip.shape();
  const int64_t frames = s[0], h = s[1], w = s[2], c = s[3];
  const int64_t th = h / cfg.patch_h, tw = w / cfg.patch_w;
  const int64_t tt = frames / cfg.patch_t;
  const int64_t n_tok = tt * th * tw;
  const int64_t pc = static_cast<int64_t>(cfg.patch_t) * cfg.patch_h * cfg.patch_w * c;
  Tensor<float> out({n_tok, pc});
  for (int64_t kt = 0; kt < tt; ++kt)
    for (int64_t ki = 0; ki < th; ++ki)
      for (int64_t kj = 0; kj < tw; ++kj) {
        float* row = out.data() + ((kt * th + ki) * tw + kj) * pc;
        int64_t col = 0;
        for (int64_t dt = 0; dt < cfg.patch_t; ++dt)
          for (int64_t dy = 0; dy < cfg.patch_h; ++dy)
            for (int64_t dx = 0; dx < cfg.patch_w; ++dx)
              for (int64_t cc = 0; cc < c; ++cc, ++col) {
                const int64_t f = kt * cfg.patch_t + dt;
                const int64_t y = ki * cfg.patch_h + dy;
                const int64_t x = kj * cfg.patch_w + dx;
                row[col] = clip.data()[((f * h + y) * w + x) * c + cc];
              }
      }
  return out;
}

VideoClip decode_video(const Tensor<float>& tokens, const ModelConfig& cfg) {
  const int64_t n_tok = cfg.n_video_tokens();
  const int64_t pc = cfg.patch_channels();
  if (tokens.shape().size() != 2 || tokens.rows() != n_tok ||
      tokens.cols() != pc)
    throw ShapeError("decode_video: expected [" + std::to_string(n_tok) + ", " +
                     std::to_string(pc) + "] tokens, got " +
                     std::to_string(tokens.rows()) + "x" +
                     std::to_string(tokens.cols()));
  VideoClip clip = make_clip(cfg.n_frames, cfg.frame_h, cfg.frame_w, 0.0f);
  const int64_t th = cfg.tokens_h(), tw = cfg.tokens_w(), tt = cfg.tokens_t();
  const int64_t h = cfg.frame_h, w = cfg.frame_w, c = cfg.channels;
  for (int64_t kt = 0; kt < tt; ++kt)
    for (int64_t ki = 0; ki < th; ++ki)
      for (int64_t kj = 0; kj < tw; ++kj) {
        const float* row = tokens.data() + ((kt * th + ki) * tw + kj) * pc;
        int64_t col = 0;
        for (int64_t dt = 0; dt < cfg.patch_t; ++dt)
          for (int64_t dy = 0; dy < cfg.patch_h; ++dy)
            for (int64_t dx = 0; dx < cfg.patch_w; ++dx)
              for (int64_t cc = 0; cc < c; ++cc, ++col) {
                const int64_t f = kt * cfg.patch_t + dt;
                const int64_t y = ki * cfg.patch_h + dy;
                const int64_t x = kj * cfg.patch_w + dx;
                clip.data()[((f * h + y) * w + x) * c + cc] =
                    std::clamp(row[col], 0.0f, 1.0f);
              }
      }
  return clip;
}

Tensor<float> encode_first_frame(const VideoClip& clip, const ModelConfig& cfg) {
  check_clip_shape(clip, cfg, "encode_first_frame");
  const auto& s = clip.shape();
  const int64_t h = s[1], w = s[2], c = s[3];
  const int64_t th = h / cfg.patch_h, tw = w / cfg.patch_w;
  const int64_t tt = s[0] / cfg.patch_t;
  const int64_t pc = static_cast<int64_t>(cfg.patch_t) * cfg.patch_h * cfg.patch_w * c;
  Tensor<float> out({tt * th * tw, pc});
  for (int64_t kt = 0; kt < tt; ++kt)
    for (int64_t ki = 0; ki < th; ++ki)
      for (int64_t kj = 0; kj < tw; ++kj) {
        float* row = out.data() + ((kt * th + ki) * tw + kj) * pc;
        int64_t col = 0;
        for (int64_t dt = 0; dt < cfg.patch_t; ++dt)
          for (int64_t dy = 0; dy < cfg.patch_h; ++dy)
            for (int64_t dx = 0; dx < cfg.patch_w; ++dx)
              for (int64_t cc = 0; cc < c; ++cc, ++col) {
                const int64_t y = ki * cfg.patch_h + dy;
                const int64_t x = kj * cfg.patch_w + dx;
                row[col] = clip.data()[(y * w + x) * c + cc];
              }
      }
  return out;
}

Tensor<float> inject_first_frame(const Tensor<float>& content,
                                 const Tensor<float>& first) {
  if (content.shape().size() != 2 || first.shape().size() != 2 ||
      content.rows() != first.rows() || content.cols() != first.cols())
    throw ShapeError("inject_first_frame: content and conditioning rows must "
                     "share one [tokens, channels] shape");
  return concat_cols(std::vector<Tensor<float>>{content, first});
}

ForwardInput make_forward_input(const ModelConfig& cfg,
                                const PairSample& sample) {
  ForwardInput in;
  in.ref_caption = sample.ref_caption;
  in.tar_caption = sample.tar_caption;
  in.ref_pre = inject_first_frame(encode_video_pre(sample.ref_video, cfg),
                                  encode_first_frame(sample.ref_video, cfg));
  in.tar_first = encode_first_frame(sample.tar_video, cfg);
  return in;
}

// ---------------------------------------------------------------------------
// Positions

std::vector<TokenPos> build_positions(const ModelConfig& cfg) {
  std::vector<TokenPos> pos;
  pos.reserve(static_cast<size_t>(cfg.n_seq_tokens()));
  const int tt = cfg.tokens_t(), th = cfg.tokens_h(), tw = cfg.tokens_w();
  for (int i = 0; i < cfg.caption_len; ++i) pos.push_back(TokenPos{true, 0, 0, 0});
  for (int kt = 0; kt < tt; ++kt)
    for (int ki = 0; ki < th; ++ki)
      for (int kj = 0; kj < tw; ++kj) {
        TokenPos p{false, kt, ki, kj};
        if (cfg.pe == PeVariant::kBiased || cfg.pe == PeVariant::kNegShiftTw)
          p.t = kt - cfg.temporal_shift;
        if (cfg.pe == PeVariant::kNegShiftTw) p.w = kj - tw;
        pos.push_back(p);
      }
  const std::vector<TokenPos> target = build_target_positions(cfg);
  pos.insert(pos.end(), target.begin(), target.end());
  return pos;
}

std::vector<TokenPos> build_target_positions(const ModelConfig& cfg) {
  std::vector<TokenPos> pos;
  pos.reserve(static_cast<size_t>(cfg.n_target_tokens()));
  for (int i = 0; i < cfg.caption_len; ++i) pos.push_back(TokenPos{true, 0, 0, 0});
  const int tt = cfg.tokens_t(), th = cfg.tokens_h(), tw = cfg.tokens_w();
  for (int kt = 0; kt < tt; ++kt)
    for (int ki = 0; ki < th; ++ki)
      for (int kj = 0; kj < tw; ++kj)
        pos.push_back(TokenPos{false, kt, ki, kj});
  return pos;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace fs = std::filesystem;

void save_checkpoint(const std::string& dir, const ModelParams& params,
                     int64_t step, uint64_t seed) {
  fs::create_directories(fs::path(dir) / "tensors");
  json tensors = json::array();
  for (size_t i = 0; i < params.names.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "tensors/%04zu.vapt", i);
    const std::string rel(stem);
    const std::string path = (fs::path(dir) / rel).string();
    write_vapt(path, params.values[i]);
    json entry;
    entry["name"] = params.names[i];
    entry["shape"] = params.values[i].shape();
    entry["trainable"] = params.trainable[i] != 0;
    entry["file"] = rel;
    entry["hash"] = hex64(fnv1a64_file(path));
    tensors.push_back(std::move(entry));
  }
  json manifest;
  manifest["format"] = "icvid-checkpoint-v1";
  manifest["config"] = json::parse(model_config_to_json(params.config));
  manifest["step"] = step;
  manifest["seed"] = seed;
  manifest["tensors"] = std::move(tensors);
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
  if (!out)
    throw DataError("checkpoint save: cannot write manifest under " + dir);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!in)
    throw DataError("checkpoint load: missing manifest.json under " + dir);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  LoadedCheckpoint out;
  json manifest;
  try {
    manifest = json::parse(text);
    if (manifest.at("format").get<std::string>() != "icvid-checkpoint-v1")
      throw DataError("checkpoint load: unrecognized format tag");
    out.params.config =
        model_config_from_json(manifest.at("config").dump());
    out.step = manifest.at("step").get<int64_t>();
    out.seed = manifest.at("seed").get<uint64_t>();
    for (const json& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const std::string rel = entry.at("file").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      const bool trainable = entry.at("trainable").get<bool>();
      const std::string path = (fs::path(dir) / rel).string();
      const std::string want_hash = entry.at("hash").get<std::string>();
      if (hex64(fnv1a64_file(path)) != want_hash)
        throw DataError("checkpoint load: content hash mismatch for " + name +
                        " (" + rel + ")");
      Tensor<float> v = read_vapt<float>(path);
      if (v.shape() != shape)
        throw DataError("checkpoint load: shape mismatch for " + name);
      if (trainable !=
          is_param_trainable(out.params.config.variant, name))
        throw DataError("checkpoint load: trainable flag mismatch for " + name);
      out.params.add(name, std::move(v), trainable);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is malformed: ") + e.what());
  }
  return out;
}

}  // namespace icvid
