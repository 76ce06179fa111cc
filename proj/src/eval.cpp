#include "icvid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "icvid/errors.hpp"
#include "icvid/tensor_io.hpp"

namespace icvid {

using nlohmann::json;

namespace {

double mse(const VideoClip& a, const VideoClip& b) {
  if (a.shape() != b.shape())
    throw ShapeError("oracle residual on mismatched video shapes");
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.numel());
}

}  // namespace

AlignmentResult oracle_alignment(const VideoClip& gen, const Subject& target_subject) {
  if (gen.rank() != 4 || gen.dim(3) != 3)
    throw ShapeError("oracle_alignment expects a [frames x H x W x 3] clip");
  const int n_frames = static_cast<int>(gen.dim(0));
  const int h = static_cast<int>(gen.dim(1));
  const int w = static_cast<int>(gen.dim(2));

  AlignmentResult out;
  const auto& inv = semantic_inventory();
  out.residuals.reserve(inv.size());
  int best = -1;
  for (size_t i = 0; i < inv.size(); ++i) {
    const VideoClip render =
        apply_semantic(inv[i], target_subject, n_frames, h, w).video;
    const double r = mse(gen, render);
    out.residuals.push_back(r);
    if (best < 0 || r < out.residuals[static_cast<size_t>(best)])
      best = static_cast<int>(i);
  }
  out.best_id = inv[static_cast<size_t>(best)].id;
  out.best_residual = out.residuals[static_cast<size_t>(best)];

  VideoClip still = make_clip(n_frames, h, w);
  const Tensor<float> rest = render_subject(target_subject, h, w);
  for (int k = 0; k < n_frames; ++k)
    std::copy(rest.data(), rest.data() + rest.numel(), frame_ptr(still, k));
  out.background_residual = mse(gen, still);

  // A generation equal to the static baseline carries no semantic at all.
  if (out.background_residual <= 1e-12) {
    out.score = 0.0;
  } else {
    out.score =
        100.0 * std::max(0.0, 1.0 - out.best_residual / out.background_residual);
  }
  return out;
}

namespace {

double mean_abs_temporal_diff(const VideoClip& v, int order) {
  if (v.rank() != 4) throw ShapeError("motion proxies expect a rank-4 clip");
  const int n = static_cast<int>(v.dim(0));
  const int64_t fsz = v.numel() / n;
  if (n <= order) return 0.0;
  double acc = 0.0;
  for (int k = 0; k + order < n; ++k) {
    const float* a = v.data() + static_cast<int64_t>(k) * fsz;
    const float* b = a + fsz;
    if (order == 1) {
      for (int64_t p = 0; p < fsz; ++p)
        acc += std::abs(static_cast<double>(b[p]) - a[p]);
    } else {
      const float* c = b + fsz;
      for (int64_t p = 0; p < fsz; ++p)
        acc += std::abs(static_cast<double>(c[p]) - 2.0 * b[p] + a[p]);
    }
  }
  return acc / (static_cast<double>(n - order) * static_cast<double>(fsz));
}

}  // namespace

double motion_smoothness(const VideoClip& v) {
  const double m = mean_abs_temporal_diff(v, 2) * 4.0;
  return 1.0 - std::clamp(m, 0.0, 1.0);
}

double dynamic_degree(const VideoClip& v) {
  return std::clamp(mean_abs_temporal_diff(v, 1) * 8.0, 0.0, 1.0);
}

EvalRecord score_sample(const PairSample& sample, const VideoClip& gen) {
  EvalRecord rec;
  rec.sample_id = sample.id;
  rec.split = sample.split;
  rec.true_semantic = sample.semantic.id;
  const AlignmentResult a = oracle_alignment(gen, sample.tar_subject);
  rec.predicted_semantic = a.best_id;
  rec.alignment = a.score;
  rec.smoothness = motion_smoothness(gen);
  rec.dynamic = dynamic_degree(gen);
  return rec;
}

std::vector<EvalAggregate> aggregate_records(const std::vector<EvalRecord>& records) {
  std::vector<EvalAggregate> out;
  for (int s = 0; s <= 2; ++s) {
    const Split split = static_cast<Split>(s);
    EvalAggregate agg;
    agg.split = split;
    for (const EvalRecord& r : records) {
      if (r.split != split) continue;
      ++agg.count;
      agg.accuracy += r.predicted_semantic == r.true_semantic ? 1.0 : 0.0;
      agg.alignment += r.alignment;
      agg.smoothness += r.smoothness;
      agg.dynamic += r.dynamic;
    }
    if (agg.count == 0) continue;
    agg.accuracy /= agg.count;
    agg.alignment /= agg.count;
    agg.smoothness /= agg.count;
    agg.dynamic /= agg.count;
    out.push_back(agg);
  }
  return out;
}

namespace {

std::vector<EvalRecord> sorted_by_id(std::vector<EvalRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const EvalRecord& a, const EvalRecord& b) {
              return a.sample_id < b.sample_id;
            });
  return records;
}

json record_to_json(const EvalRecord& r) {
  return json{{"sample_id", r.sample_id},
              {"split", split_name(r.split)},
              {"true_semantic", r.true_semantic},
              {"predicted_semantic", r.predicted_semantic},
              {"alignment", r.alignment},
              {"smoothness", r.smoothness},
              {"dynamic", r.dynamic}};
}

}  // namespace

void emit_report(const std::vector<EvalRecord>& records,
                 const std::string& format, const std::string& path) {
  const std::vector<EvalRecord> rows = sorted_by_id(records);
  std::string out;
  if (format == "csv") {
    out = "sample_id,split,true_semantic,predicted_semantic,alignment,"
          "smoothness,dynamic\n";
    char buf[256];
    for (const EvalRecord& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%s,%s,%.6f,%.6f,%.6f\n",
                    r.sample_id, split_name(r.split), r.true_semantic.c_str(),
                    r.predicted_semantic.c_str(), r.alignment, r.smoothness,
                    r.dynamic);
      out += buf;
    }
  } else if (format == "json") {
    for (const EvalRecord& r : rows) out += record_to_json(r).dump() + "\n";
  } else {
    throw UsageError("unknown report format '" + format + "' (csv|json)");
  }
  write_text_file(path, out);
}

std::vector<EvalRecord> parse_report_jsonl(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<EvalRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EvalRecord r;
      r.sample_id = j.at("sample_id").get<int>();
      r.split = split_from_name(j.at("split").get<std::string>());
      r.true_semantic = j.at("true_semantic").get<std::string>();
      r.predicted_semantic = j.at("predicted_semantic").get<std::string>();
      r.alignment = j.at("alignment").get<double>();
      r.smoothness = j.at("smoothness").get<double>();
      r.dynamic = j.at("dynamic").get<double>();
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError("report line is not a valid record: " + std::string(e.what()));
    }
  }
  return out;
}

std::string aggregates_to_json(const std::vector<EvalAggregate>& aggs) {
  json out = json::array();
  for (const EvalAggregate& a : aggs)
    out.push_back(json{{"split", split_name(a.split)},
                       {"count", a.count},
                       {"accuracy", a.accuracy},
                       {"alignment", a.alignment},
                       {"smoothness", a.smoothness},
                       {"dynamic", a.dynamic}});
  return out.dump(2);
}

}  // namespace icvid
