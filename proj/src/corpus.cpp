#include "icvid/corpus.hpp"

#include <filesystem>

#include <json.hpp>

#include "icvid/errors.hpp"
#include "icvid/rng.hpp"
#include "icvid/tensor_io.hpp"

namespace icvid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags keep the per-purpose RNG streams disjoint.
constexpr uint64_t kSubjectStream = 901;
constexpr uint64_t kSplitTag[3] = {101, 202, 303};
constexpr uint64_t kBaseTag = 404;

std::string sample_stem(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%06d", id);
  return buf;
}

json subject_to_json(const Subject& s) {
  return json{{"shape", shape_name(s.shape)},
              {"color", {s.color[0], s.color[1], s.color[2]}},
              {"color_idx", s.color_idx},
              {"size", s.size},
              {"row", s.row},
              {"col", s.col},
              {"seed", s.seed}};
}

Subject subject_from_json(const json& j) {
  Subject s;
  s.shape = shape_from_name(j.at("shape").get<std::string>());
  for (int i = 0; i < 3; ++i) s.color[static_cast<size_t>(i)] = j.at("color").at(i).get<float>();
  s.color_idx = j.at("color_idx").get<int>();
  s.size = j.at("size").get<int>();
  s.row = j.at("row").get<int>();
  s.col = j.at("col").get<int>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

json semantic_to_json(const SemanticSpec& spec) {
  json params = json::object();
  for (const auto& [k, v] : spec.params) params[k] = v;
  return json{{"category", category_name(spec.category)},
              {"id", spec.id},
              {"params", params},
              {"param_bucket", spec.param_bucket}};
}

SemanticSpec semantic_from_json(const json& j) {
  SemanticSpec s;
  s.category = category_from_name(j.at("category").get<std::string>());
  s.id = j.at("id").get<std::string>();
  for (const auto& [k, v] : j.at("params").items()) s.params[k] = v.get<double>();
  s.param_bucket = j.at("param_bucket").get<int>();
  return s;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Zeroshot: return "zeroshot";
  }
  throw UsageError("unknown split enum value");
}

Split split_from_name(const std::string& name) {
  for (int i = 0; i <= 2; ++i)
    if (name == split_name(static_cast<Split>(i))) return static_cast<Split>(i);
  throw DataError("unknown split name: " + name);
}

Subject sample_subject(uint64_t subject_seed, const SemanticSpec& spec,
                       int n_frames, int frame_h, int frame_w) {
  CounterRng rng(subject_seed, kSubjectStream);
  Subject s;
  const std::vector<Shape> shapes = allowed_shapes(spec);
  s.shape = shapes[rng.next_below(shapes.size())];
  s.color_idx = static_cast<int>(rng.next_below(kPaletteSize));
  s.color = palette_color(s.color_idx);
  s.size = vocab::kMinSubjectSize +
           static_cast<int>(rng.next_below(
               vocab::kMaxSubjectSize - vocab::kMinSubjectSize + 1));
  const SafeBox box = safe_box(spec, s.size, n_frames, frame_h, frame_w);
  s.row = box.row_min + static_cast<int>(rng.next_below(
                            static_cast<uint64_t>(box.row_max - box.row_min + 1)));
  s.col = box.col_min + static_cast<int>(rng.next_below(
                            static_cast<uint64_t>(box.col_max - box.col_min + 1)));
  s.seed = subject_seed;
  return s;
}

PairSample gen_pair(const SemanticSpec& spec, const Subject& ref_subject,
                    const Subject& tar_subject, int n_frames, int frame_h,
                    int frame_w) {
  PairSample p;
  p.semantic = spec;
  p.ref_subject = ref_subject;
  p.tar_subject = tar_subject;
  RenderResult ref = apply_semantic(spec, ref_subject, n_frames, frame_h, frame_w);
  RenderResult tar = apply_semantic(spec, tar_subject, n_frames, frame_h, frame_w);
  p.ref_video = std::move(ref.video);
  p.tar_video = std::move(tar.video);
  p.ref_clamped = ref.clamped;
  p.tar_clamped = tar.clamped;
  p.ref_caption = make_caption(spec, ref_subject);
  p.tar_caption = make_caption(spec, tar_subject);
  return p;
}

namespace {

int capacity_of(const CorpusConfig& cfg) { return cfg.subject_pool / 2; }

void check_capacity(const CorpusConfig& cfg, Split split, int n) {
  if (n > capacity_of(cfg))
    throw DataError("corpus size " + std::to_string(n) + " for split '" +
                    split_name(split) + "' exceeds combinatorial capacity " +
                    std::to_string(capacity_of(cfg)) +
                    " (subject_pool/2 = " + std::to_string(cfg.subject_pool) +
                    "/2 distinct subject pairs)");
}

}  // namespace

PairSample corpus_sample(const CorpusConfig& cfg, Split split, int index) {
  check_capacity(cfg, split, index + 1);
  const auto& inv = semantic_inventory();
  const SemanticSpec& sem =
      split == Split::Zeroshot
          ? inv[static_cast<size_t>(
                zeroshot_semantic_indices()[static_cast<size_t>(index % 4)])]
          : inv[static_cast<size_t>(
                trained_semantic_indices()[static_cast<size_t>(index % 12)])];
  const uint64_t tag = kSplitTag[static_cast<int>(split)];
  const uint64_t ref_seed = hash3(cfg.master_seed, tag, 2 * static_cast<uint64_t>(index));
  const uint64_t tar_seed = hash3(cfg.master_seed, tag, 2 * static_cast<uint64_t>(index) + 1);
  PairSample p = gen_pair(sem,
                          sample_subject(ref_seed, sem, cfg.n_frames, cfg.frame_h, cfg.frame_w),
                          sample_subject(tar_seed, sem, cfg.n_frames, cfg.frame_h, cfg.frame_w),
                          cfg.n_frames, cfg.frame_h, cfg.frame_w);
  p.split = split;
  return p;
}

std::vector<PairSample> build_corpus(const CorpusConfig& cfg) {
  check_capacity(cfg, Split::Train, cfg.n_train);
  check_capacity(cfg, Split::Test, cfg.n_test);
  check_capacity(cfg, Split::Zeroshot, cfg.n_zeroshot);
  std::vector<PairSample> all;
  all.reserve(static_cast<size_t>(cfg.n_train + cfg.n_test + cfg.n_zeroshot));
  int id = 0;
  const Split splits[3] = {Split::Train, Split::Test, Split::Zeroshot};
  const int counts[3] = {cfg.n_train, cfg.n_test, cfg.n_zeroshot};
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < counts[s]; ++i) {
      PairSample p = corpus_sample(cfg, splits[s], i);
      p.id = id++;
      all.push_back(std::move(p));
    }
  return all;
}

BaseSample gen_base_sample(uint64_t master_seed, int index, int n_frames,
                           int frame_h, int frame_w) {
  const auto& inv = base_inventory();
  BaseSample b;
  b.semantic = inv[static_cast<size_t>(index) % inv.size()];
  const uint64_t seed = hash3(master_seed, kBaseTag, static_cast<uint64_t>(index));
  b.subject = sample_subject(seed, b.semantic, n_frames, frame_h, frame_w);
  b.video = apply_semantic(b.semantic, b.subject, n_frames, frame_h, frame_w).video;
  b.caption = make_caption(b.semantic, b.subject);
  return b;
}

std::string corpus_config_to_json(const CorpusConfig& cfg) {
  json j{{"n_train", cfg.n_train},
         {"n_test", cfg.n_test},
         {"n_zeroshot", cfg.n_zeroshot},
         {"n_frames", cfg.n_frames},
         {"frame_h", cfg.frame_h},
         {"frame_w", cfg.frame_w},
         {"subject_pool", cfg.subject_pool},
         {"master_seed", cfg.master_seed}};
  return j.dump(2);
}

CorpusConfig corpus_config_from_json(const std::string& text) {
  try {
    json j = json::parse(text);
    CorpusConfig cfg;
    cfg.n_train = j.at("n_train").get<int>();
    cfg.n_test = j.at("n_test").get<int>();
    cfg.n_zeroshot = j.at("n_zeroshot").get<int>();
    cfg.n_frames = j.at("n_frames").get<int>();
    cfg.frame_h = j.at("frame_h").get<int>();
    cfg.frame_w = j.at("frame_w").get<int>();
    cfg.subject_pool = j.at("subject_pool").get<int>();
    cfg.master_seed = j.at("master_seed").get<uint64_t>();
    return cfg;
  } catch (const json::exception& e) {
    throw DataError("corpus config JSON is malformed: " + std::string(e.what()));
  }
}

std::string subject_to_json_string(const Subject& s) {
  return subject_to_json(s).dump(2);
}

Subject subject_from_json_string(const std::string& text) {
  try {
    return subject_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError("subject JSON is malformed: " + std::string(e.what()));
  }
}

void write_corpus(const std::vector<PairSample>& samples,
                  const CorpusConfig& cfg, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "samples");
  fs::create_directories(fs::path(dir) / "videos");
  json manifest;
  manifest["format"] = "icvid-corpus-v1";
  manifest["master_seed"] = cfg.master_seed;
  manifest["config"] = json::parse(corpus_config_to_json(cfg));
  int counts[3] = {0, 0, 0};
  json entries = json::array();
  for (const PairSample& p : samples) {
    ++counts[static_cast<int>(p.split)];
    const std::string stem = sample_stem(p.id);
    const std::string sidecar_rel = "samples/" + stem + ".json";
    const std::string ref_rel = "videos/" + stem + "_ref.vapt";
    const std::string tar_rel = "videos/" + stem + "_tar.vapt";
    json sc{{"id", p.id},
            {"split", split_name(p.split)},
            {"semantic", semantic_to_json(p.semantic)},
            {"ref_subject", subject_to_json(p.ref_subject)},
            {"tar_subject", subject_to_json(p.tar_subject)},
            {"ref_caption", p.ref_caption},
            {"tar_caption", p.tar_caption},
            {"ref_clamped", p.ref_clamped},
            {"tar_clamped", p.tar_clamped},
            // First frames are frame 0 of each video; not stored separately.
            {"files", {{"ref_video", ref_rel}, {"tar_video", tar_rel}}}};
    write_text_file((fs::path(dir) / sidecar_rel).string(), sc.dump(2) + "\n");
    write_vapt((fs::path(dir) / ref_rel).string(), p.ref_video);
    write_vapt((fs::path(dir) / tar_rel).string(), p.tar_video);
    entries.push_back(
        {{"id", p.id},
         {"split", split_name(p.split)},
         {"sidecar", sidecar_rel},
         {"ref_video", ref_rel},
         {"tar_video", tar_rel},
         {"sidecar_hash", hex64(fnv1a64_file((fs::path(dir) / sidecar_rel).string()))},
         {"ref_hash", hex64(fnv1a64_file((fs::path(dir) / ref_rel).string()))},
         {"tar_hash", hex64(fnv1a64_file((fs::path(dir) / tar_rel).string()))}});
  }
  manifest["counts"] = {{"train", counts[0]}, {"test", counts[1]}, {"zeroshot", counts[2]}};
  manifest["samples"] = entries;
  write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

LoadedCorpus load_corpus(const std::string& dir, bool verify_hashes) {
  const fs::path root(dir);
  if (!fs::exists(root / "manifest.json"))
    throw DataError("corpus manifest not found under: " + dir);
  json manifest;
  try {
    manifest = json::parse(read_text_file((root / "manifest.json").string()));
  } catch (const json::exception& e) {
    throw DataError("corpus manifest is not valid JSON: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "icvid-corpus-v1")
    throw DataError("corpus manifest has unknown format tag");
  LoadedCorpus out;
  out.config = corpus_config_from_json(manifest.at("config").dump());
  for (const json& e : manifest.at("samples")) {
    const std::string sidecar_rel = e.at("sidecar").get<std::string>();
    const std::string ref_rel = e.at("ref_video").get<std::string>();
    const std::string tar_rel = e.at("tar_video").get<std::string>();
    if (verify_hashes) {
      auto check = [&](const std::string& rel, const std::string& want) {
        const std::string got = hex64(fnv1a64_file((root / rel).string()));
        if (got != want)
          throw DataError("corpus content hash mismatch for " + rel +
                          " (manifest " + want + ", file " + got + ")");
      };
      check(sidecar_rel, e.at("sidecar_hash").get<std::string>());
      check(ref_rel, e.at("ref_hash").get<std::string>());
      check(tar_rel, e.at("tar_hash").get<std::string>());
    }
    json sc;
    try {
      sc = json::parse(read_text_file((root / sidecar_rel).string()));
    } catch (const json::exception& ex) {
      throw DataError("corpus sidecar " + sidecar_rel + " is not valid JSON: " +
                      std::string(ex.what()));
    }
    PairSample p;
    p.id = sc.at("id").get<int>();
    p.split = split_from_name(sc.at("split").get<std::string>());
    p.semantic = semantic_from_json(sc.at("semantic"));
    p.ref_subject = subject_from_json(sc.at("ref_subject"));
    p.tar_subject = subject_from_json(sc.at("tar_subject"));
    p.ref_caption = sc.at("ref_caption").get<std::vector<int>>();
    p.tar_caption = sc.at("tar_caption").get<std::vector<int>>();
    p.ref_clamped = sc.at("ref_clamped").get<bool>();
    p.tar_clamped = sc.at("tar_clamped").get<bool>();
    p.ref_video = read_vapt<float>((root / ref_rel).string());
    p.tar_video = read_vapt<float>((root / tar_rel).string());
    out.samples.push_back(std::move(p));
  }
  return out;
}

std::vector<const PairSample*> split_view(const std::vector<PairSample>& all,
                                          Split split) {
  std::vector<const PairSample*> view;
  for (const PairSample& p : all)
    if (p.split == split) view.push_back(&p);
  return view;
}

}  // namespace icvid
