#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icvid/captions.hpp"
#include "icvid/semantics.hpp"
#include "icvid/sprites.hpp"
#include "icvid/video.hpp"

namespace icvid {

enum class Split : int { Train = 0, Test = 1, Zeroshot = 2 };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// A paired sample: reference and target videos sharing one semantic
// condition. First frames are frame 0 of each video by construction.
struct PairSample {
  int id = 0;
  Split split = Split::Train;
  SemanticSpec semantic;
  Subject ref_subject, tar_subject;
  VideoClip ref_video, tar_video;
  std::vector<int> ref_caption, tar_caption;
  bool ref_clamped = false, tar_clamped = false;

  Tensor<float> ref_first() const { return frame_of(ref_video, 0); }
  Tensor<float> tar_first() const { return frame_of(tar_video, 0); }
};

struct CorpusConfig {
  int n_train = 2000;
  int n_test = 48;
  int n_zeroshot = 64;
  int n_frames = 8;
  int frame_h = 16;
  int frame_w = 16;
  // Per-split subject seed pool; each pair consumes two draws, so the
  // combinatorial capacity is subject_pool/2 pairs per split.
  int subject_pool = 4096;
  uint64_t master_seed = 0;
};

// Deterministic subject draw: shape (restricted to the semantic's compatible
// set), palette color, size in 5..7, and a position inside the semantic's
// safe box so corpus videos never clamp.
Subject sample_subject(uint64_t subject_seed, const SemanticSpec& spec,
                       int n_frames, int frame_h, int frame_w);

// ref = apply_semantic(spec, ref_subject), tar = apply_semantic(spec,
// tar_subject); captions via make_caption.
PairSample gen_pair(const SemanticSpec& spec, const Subject& ref_subject,
                    const Subject& tar_subject, int n_frames, int frame_h,
                    int frame_w);

// Pure per-index sample function (embarrassingly parallel by construction).
PairSample corpus_sample(const CorpusConfig& cfg, Split split, int index);

// Full corpus in memory: train/test over the trained semantics with disjoint
// subject seed pools, zero-shot over the held-out semantic of each category.
std::vector<PairSample> build_corpus(const CorpusConfig& cfg);

// Pretraining-only single-video samples over the base dynamics family.
struct BaseSample {
  Subject subject;
  SemanticSpec semantic;
  VideoClip video;
  std::vector<int> caption;
};
BaseSample gen_base_sample(uint64_t master_seed, int index, int n_frames,
                           int frame_h, int frame_w);

// Dataset directory: manifest.json + one JSON sidecar per sample + one
// tensor container per video, all content-hashed in the manifest.
void write_corpus(const std::vector<PairSample>& samples,
                  const CorpusConfig& cfg, const std::string& dir);

struct LoadedCorpus {
  CorpusConfig config;
  std::vector<PairSample> samples;
};
LoadedCorpus load_corpus(const std::string& dir, bool verify_hashes = true);

std::vector<const PairSample*> split_view(const std::vector<PairSample>& all,
                                          Split split);

std::string corpus_config_to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const std::string& json_text);

// Standalone subject serialization (sampling sidecars, judge stub inputs).
std::string subject_to_json_string(const Subject& s);
Subject subject_from_json_string(const std::string& json_text);

}  // namespace icvid
