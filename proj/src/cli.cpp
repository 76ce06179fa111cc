#include "icvid/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "icvid/errors.hpp"
#include "icvid/forward.hpp"
#include "icvid/tensor_io.hpp"

namespace icvid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::set<std::string> keys_of(const std::string& json_text) {
  const json j = json::parse(json_text);  // named: items() must not outlive it
  std::set<std::string> keys;
  for (const auto& item : j.items()) keys.insert(item.key());
  return keys;
}

// Override sections and the flat keys each one owns. "run" collects the
// driver-level keys that belong to no section (pretrain_*, eval_samples,
// debug_nan_step).
const std::map<std::string, std::set<std::string>>& section_keys() {
  static const std::map<std::string, std::set<std::string>> table = [] {
    std::map<std::string, std::set<std::string>> t;
    t["model"] = keys_of(model_config_to_json(ModelConfig{}));
    t["flow"] = keys_of(flow_config_to_json(FlowConfig{}));
    t["train"] = keys_of(train_config_to_json(TrainConfig{}));
    t["corpus"] = keys_of(corpus_config_to_json(CorpusConfig{}));
    std::set<std::string> run;
    for (const std::string& k : keys_of(run_config_to_json(RunConfig{}))) {
      bool sectioned = false;
      for (const auto& [name, keys] : t) sectioned = sectioned || keys.count(k) > 0;
      if (!sectioned) run.insert(k);
    }
    t["run"] = run;
    return t;
  }();
  return table;
}

// Accepts "key" (any section) or "section.key"; returns the flat key.
std::string flat_key_checked(const std::string& spec) {
  const auto& table = section_keys();
  const size_t dot = spec.find('.');
  if (dot != std::string::npos) {
    const std::string section = spec.substr(0, dot);
    const std::string key = spec.substr(dot + 1);
    auto it = table.find(section);
    if (it == table.end() || it->second.count(key) == 0)
      throw UsageError("unknown override key: " + spec);
    return key;
  }
  for (const auto& [name, keys] : table)
    if (keys.count(spec)) return spec;
  throw UsageError("unknown override key: " + spec);
}

// Values parse as JSON when they can (numbers, booleans, lists); bare words
// like variant names fall back to strings.
json parse_override_value(const std::string& text) {
  json v = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (v.is_discarded()) return json(text);
  return v;
}

int parse_int(const std::string& s) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw UsageError("expected an integer, got: " + s);
  return static_cast<int>(v);
}

uint64_t parse_u64(const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (end == s.c_str() || *end != '\0')
    throw UsageError("expected an unsigned integer, got: " + s);
  return static_cast<uint64_t>(v);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start <= s.size() && !s.empty()) {
    const size_t comma = s.find(',', start);
    const size_t end = comma == std::string::npos ? s.size() : comma;
    if (end > start) out.push_back(s.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

fs::path verb_run_dir(const Command& cmd, const std::string& prefix,
                      const RunConfig& cfg, uint64_t seed) {
  return fs::path(cmd.out_dir) /
         (prefix + "-" + run_config_hash(cfg) + "-s" + std::to_string(seed));
}

// split_from_name classifies bad names as data errors (it also parses
// sidecars); here the name is a user-typed flag, so misuse maps to usage.
Split parse_split_flag(const std::string& name) {
  try {
    return split_from_name(name);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

std::pair<Split, int> parse_sample_ref(const std::string& ref) {
  const size_t colon = ref.find(':');
  if (colon == std::string::npos)
    throw UsageError("--sample must be <split>:<index>, got: " + ref);
  return {parse_split_flag(ref.substr(0, colon)),
          parse_int(ref.substr(colon + 1))};
}

int cmd_gen_data(const Command& cmd, const RunConfig& cfg) {
  const fs::path dir = verb_run_dir(cmd, "data", cfg, cfg.corpus.master_seed);
  fs::create_directories(dir);
  write_config_snapshot(dir, cfg);
  std::vector<PairSample> samples = build_corpus(cfg.corpus);
  const fs::path corpus_dir = dir / "corpus";
  write_corpus(samples, cfg.corpus, corpus_dir.string());
  std::cout << "wrote " << samples.size() << " samples to "
            << corpus_dir.string() << "\n";
  return 0;
}

int cmd_train(const Command& cmd, const RunConfig& cfg) {
  RunResult r = run_experiment(cfg, fs::path(cmd.out_dir));
  const EvalEvent& fin = r.final_event();
  std::cout << "run " << r.run_dir.string() << "\n"
            << "step " << fin.step << " loss " << fin.loss << " accuracy "
            << fin.accuracy << " alignment " << fin.alignment << "\n";
  return 0;
}

int cmd_sample(const Command& cmd, const RunConfig& cfg) {
  LoadedCheckpoint ck = load_checkpoint(cmd.checkpoint);
  const auto [split, index] = parse_sample_ref(cmd.sample_ref);
  PairSample sample = corpus_sample(cfg.corpus, split, index);
  ForwardInput in = make_forward_input(ck.params.config, sample);

  if (!cmd.image_path.empty()) {
    Tensor<float> img = read_vapt<float>(cmd.image_path);
    VideoClip frame;
    if (img.shape().size() == 4) {
      frame = std::move(img);
    } else if (img.shape().size() == 3) {
      frame = Tensor<float>({1, img.shape()[0], img.shape()[1], img.shape()[2]});
      for (int64_t i = 0; i < img.numel(); ++i) frame.data()[i] = img.data()[i];
    } else {
      throw DataError("first-frame container must be [h,w,c] or [frames,h,w,c]");
    }
    in.tar_first = encode_first_frame(frame, ck.params.config);
  }

  const uint64_t seed = cfg.train.seed;
  CounterRng rng = CounterRng(seed, kEvalNoiseStream).fork(uint64_t(index));
  VideoClip video = sample_video(ck.params, in, cfg.flow, rng);

  const fs::path dir = verb_run_dir(cmd, "sample", cfg, seed);
  fs::create_directories(dir);
  write_config_snapshot(dir, cfg);
  char stem_buf[64];
  std::snprintf(stem_buf, sizeof(stem_buf), "%s_%06d", split_name(split),
                index);
  const std::string stem = stem_buf;
  const fs::path video_path = dir / (stem + ".vapt");
  write_vapt(video_path.string(), video);

  json prov;
  prov["sample_id"] = stem;
  prov["split"] = split_name(split);
  prov["index"] = index;
  prov["seed"] = seed;
  prov["n_steps"] = cfg.flow.n_steps;
  prov["cfg_scale"] = cfg.flow.cfg_scale;
  prov["checkpoint"] = cmd.checkpoint;
  prov["checkpoint_step"] = ck.step;
  prov["checkpoint_hash"] =
      hex64(fnv1a64_file((fs::path(cmd.checkpoint) / "manifest.json").string()));
  prov["video"] = stem + ".vapt";
  prov["video_hash"] = hex64(fnv1a64_file(video_path.string()));
  prov["build_id"] = ICVID_BUILD_ID;
  write_text_file((dir / (stem + ".json")).string(), prov.dump(2) + "\n");

  std::cout << "wrote " << video_path.string() << "\n";
  return 0;
}

int cmd_eval(const Command& cmd, const RunConfig& cfg) {
  LoadedCheckpoint ck = load_checkpoint(cmd.checkpoint);
  const Split split = parse_split_flag(cmd.split_name);

  std::vector<EvalRecord> records;
  if (!cmd.corpus_dir.empty()) {
    LoadedCorpus lc = load_corpus(cmd.corpus_dir);
    std::vector<const PairSample*> view = split_view(lc.samples, split);
    if (view.empty())
      throw DataError("corpus at " + cmd.corpus_dir +
                      " has no samples in split " + cmd.split_name);
    for (size_t i = 0; i < view.size(); ++i) {
      ForwardInput in = make_forward_input(ck.params.config, *view[i]);
      CounterRng rng = CounterRng(cfg.train.seed, kEvalNoiseStream).fork(i);
      records.push_back(
          score_sample(*view[i], sample_video(ck.params, in, cfg.flow, rng)));
    }
  } else {
    records = evaluate_records(ck.params, cfg.flow, cfg.corpus, split,
                               cfg.eval_samples, cfg.train.seed);
  }

  const EvalAggregate agg = aggregate_records(records).at(0);
  const fs::path dir = verb_run_dir(cmd, "eval", cfg, cfg.train.seed);
  fs::create_directories(dir);
  write_config_snapshot(dir, cfg);
  emit_report(records, "json", (dir / "report.jsonl").string());
  emit_report(records, "csv", (dir / "report.csv").string());
  json summary;
  summary["split"] = split_name(split);
  summary["count"] = agg.count;
  summary["accuracy"] = agg.accuracy;
  summary["alignment"] = agg.alignment;
  summary["smoothness"] = agg.smoothness;
  summary["dynamic"] = agg.dynamic;
  summary["checkpoint_step"] = ck.step;
  write_text_file((dir / "aggregate.json").string(), summary.dump(2) + "\n");

  std::cout << "eval " << dir.string() << "\n"
            << "split " << split_name(split) << " count " << agg.count
            << " accuracy " << agg.accuracy << " alignment " << agg.alignment
            << " smoothness " << agg.smoothness << " dynamic " << agg.dynamic
            << "\n";
  return 0;
}

int cmd_ablate(const Command& cmd, const RunConfig& cfg) {
  SweepSpec sweep;
  for (const std::string& name : split_csv(cmd.variants))
    sweep.variants.push_back(variant_from_name(name));
  for (const std::string& s : split_csv(cmd.corpus_sizes))
    sweep.corpus_sizes.push_back(parse_int(s));
  for (const std::string& name : split_csv(cmd.pes))
    sweep.pes.push_back(pe_variant_from_name(name));
  for (const std::string& name : split_csv(cmd.layer_sets)) {
    layer_set_preset(name, cfg.model.n_layers);  // reject unknown names now
    sweep.layer_sets.push_back(name);
  }
  for (const std::string& s : split_csv(cmd.seeds))
    sweep.seeds.push_back(parse_u64(s));

  const fs::path dir = verb_run_dir(cmd, "ablate", cfg, cfg.train.seed);
  fs::create_directories(dir);
  write_config_snapshot(dir, cfg);
  std::vector<RunResult> results = run_sweep(cfg, sweep, dir);
  std::cout << results.size() << " runs -> "
            << (dir / "results.jsonl").string() << "\n";
  return 0;
}

}  // namespace

Command parse_args(const std::vector<std::string>& args) {
  Command cmd;
  CLI::App app{"in-context conditional video generation", "icvid"};
  app.require_subcommand(0, 1);

  auto add_common = [&cmd](CLI::App* sub) {
    sub->add_option("--config", cmd.config_path,
                    "flat-JSON run config (defaults when omitted)");
    sub->add_option("--set", cmd.overrides,
                    "override key=value or section.key=value (repeatable)");
    sub->add_option("--seed", cmd.seed,
                    "train.seed (corpus master_seed for gen-data)");
    sub->add_option("--out", cmd.out_dir, "artifact root directory");
  };

  CLI::App* gen =
      app.add_subcommand("gen-data", "materialize the procedural corpus");
  add_common(gen);

  CLI::App* train = app.add_subcommand(
      "train", "one adaptation run: metrics timeline + checkpoint");
  add_common(train);

  CLI::App* sample =
      app.add_subcommand("sample", "generate one video from a checkpoint");
  add_common(sample);
  sample->add_option("--checkpoint", cmd.checkpoint, "checkpoint directory")
      ->required();
  sample->add_option("--sample", cmd.sample_ref,
                     "reference pair as <split>:<index>");
  sample->add_option("--image", cmd.image_path,
                     "target first frame (tensor container; defaults to the "
                     "pair's own)");

  CLI::App* ev =
      app.add_subcommand("eval", "score a checkpoint over a split");
  add_common(ev);
  ev->add_option("--checkpoint", cmd.checkpoint, "checkpoint directory")
      ->required();
  ev->add_option("--split", cmd.split_name, "train | test | zeroshot");
  ev->add_option("--corpus", cmd.corpus_dir,
                 "score an on-disk corpus instead of the procedural one");

  CLI::App* ab = app.add_subcommand(
      "ablate", "sweep variants / corpus sizes / PE / layer sets / seeds");
  add_common(ab);
  ab->add_option("--variants", cmd.variants, "comma-separated variant names");
  ab->add_option("--corpus-sizes", cmd.corpus_sizes,
                 "comma-separated training-set sizes");
  ab->add_option("--pes", cmd.pes, "comma-separated PE variant names");
  ab->add_option("--layer-sets", cmd.layer_sets,
                 "comma-separated expert layer-set presets");
  ab->add_option("--seeds", cmd.seeds, "comma-separated adaptation seeds");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == static_cast<int>(CLI::ExitCodes::Success)) {
      cmd.verb = "help";
      cmd.help_text = app.help("", CLI::AppFormatMode::All);
      return cmd;
    }
    throw UsageError(e.what());
  }

  std::vector<CLI::App*> parsed = app.get_subcommands();
  if (parsed.empty())
    throw UsageError(
        "missing verb: expected gen-data, train, sample, eval, or ablate");
  cmd.verb = parsed.front()->get_name();
  return cmd;
}

RunConfig resolve_config(const Command& cmd) {
  json flat = json::parse(run_config_to_json(RunConfig{}));

  if (!cmd.config_path.empty()) {
    json file = json::parse(read_text_file(cmd.config_path), nullptr,
                            /*allow_exceptions=*/false);
    if (file.is_discarded() || !file.is_object())
      throw DataError("config file is not a JSON object: " + cmd.config_path);
    for (const auto& item : file.items()) {
      if (item.key() == "build_id" || item.key() == "config_hash") continue;
      try {
        flat[flat_key_checked(item.key())] = item.value();
      } catch (const UsageError&) {
        throw DataError("unknown config key in " + cmd.config_path + ": " +
                        item.key());
      }
    }
  }

  for (const std::string& ov : cmd.overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw UsageError("override must be key=value, got: " + ov);
    flat[flat_key_checked(ov.substr(0, eq))] =
        parse_override_value(ov.substr(eq + 1));
  }

  RunConfig cfg = run_config_from_json(flat.dump());
  if (cmd.seed) {
    if (cmd.verb == "gen-data")
      cfg.corpus.master_seed = *cmd.seed;
    else
      cfg.train.seed = *cmd.seed;
  }
  cfg.normalize();
  cfg.validate();
  return cfg;
}

int dispatch(const Command& cmd) {
  try {
    if (cmd.verb == "help") {
      std::cout << cmd.help_text;
      return 0;
    }
    RunConfig cfg = resolve_config(cmd);
    if (cmd.verb == "gen-data") return cmd_gen_data(cmd, cfg);
    if (cmd.verb == "train") return cmd_train(cmd, cfg);
    if (cmd.verb == "sample") return cmd_sample(cmd, cfg);
    if (cmd.verb == "eval") return cmd_eval(cmd, cfg);
    if (cmd.verb == "ablate") return cmd_ablate(cmd, cfg);
    throw UsageError("unknown verb: " + cmd.verb);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ShapeError& e) {
    std::cerr << "usage error (shape): " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return 3;
  } catch (const ProtocolError& e) {
    std::cerr << "data error (protocol): " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, const char* const* argv) {
  Command cmd;
  try {
    cmd = parse_args(std::vector<std::string>(argv + 1, argv + argc));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }
  return dispatch(cmd);
}

}  // namespace icvid
