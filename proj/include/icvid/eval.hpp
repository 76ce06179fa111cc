#pragma once

#include <string>
#include <vector>

#include "icvid/corpus.hpp"
#include "icvid/semantics.hpp"
#include "icvid/sprites.hpp"
#include "icvid/video.hpp"

namespace icvid {

// Exact semantic-alignment oracle. For each inventory semantic s, the
// residual is MSE(gen, apply_semantic(s, target_subject)); best_id is the
// argmin (ties broken by inventory order). The score is normalized against
// the static-video baseline (the subject at rest, repeated): a generation
// indistinguishable from "did nothing" scores 0, an exact rendering of some
// semantic scores 100.
struct AlignmentResult {
  std::string best_id;
  double score = 0.0;              // in [0, 100]
  double best_residual = 0.0;
  double background_residual = 0.0;
  std::vector<double> residuals;   // one per inventory entry, same order
};

AlignmentResult oracle_alignment(const VideoClip& gen, const Subject& target_subject);

// Motion proxies on [frames x H x W x 3] clips in [0,1].
// smoothness = 1 - clamp(mean |second temporal difference| * 4, 0, 1)
// dynamic    =     clamp(mean |first  temporal difference| * 8, 0, 1)
double motion_smoothness(const VideoClip& v);
double dynamic_degree(const VideoClip& v);

struct EvalRecord {
  int sample_id = 0;
  Split split = Split::Test;
  std::string true_semantic;
  std::string predicted_semantic;
  double alignment = 0.0;   // [0, 100]
  double smoothness = 0.0;  // [0, 1]
  double dynamic = 0.0;     // [0, 1]
};

// Scores one generated target video against its sample's ground truth.
EvalRecord score_sample(const PairSample& sample, const VideoClip& gen);

struct EvalAggregate {
  Split split = Split::Test;
  int count = 0;
  double accuracy = 0.0;    // fraction with predicted == true semantic
  double alignment = 0.0;   // arithmetic means below
  double smoothness = 0.0;
  double dynamic = 0.0;
};

// One aggregate per split present in `records`, in split enum order.
std::vector<EvalAggregate> aggregate_records(const std::vector<EvalRecord>& records);

// Report emitters. Rows are ordered by sample id ascending in both formats.
// CSV columns: sample_id,split,true_semantic,predicted_semantic,alignment,
// smoothness,dynamic (UTF-8, LF line endings, no quoting needed: fields
// contain no commas by construction). JSON is JSON-lines, one record per
// line, numeric fields at full round-trip precision.
void emit_report(const std::vector<EvalRecord>& records,
                 const std::string& format, const std::string& path);
std::vector<EvalRecord> parse_report_jsonl(const std::string& path);

std::string aggregates_to_json(const std::vector<EvalAggregate>& aggs);

}  // namespace icvid
