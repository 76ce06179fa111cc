#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "icvid/experiment.hpp"

// Command-line entry point. One verb per process; everything an invocation
// does is a pure function of (config file, --set overrides, --seed), so any
// artifact can be regenerated from its config snapshot.
//
//   gen-data   materialize the procedural corpus to disk
//   train      one adaptation run: metrics timeline + final checkpoint
//   sample     one conditional generation from a checkpoint
//   eval       score a checkpoint over a split and emit reports
//   ablate     sweep variants / corpus sizes / PE / layer sets / seeds
//
// Configuration is a single flat JSON object (the run-config snapshot
// format); --set key=value / --set section.key=value both address it, and
// unknown keys are rejected before any work. No environment variables.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric abort.

namespace icvid {

struct Command {
  std::string verb;  // gen-data | train | sample | eval | ablate | help
  std::string config_path;              // optional flat-JSON config file
  std::vector<std::string> overrides;   // raw "key=value" strings, in order
  std::optional<uint64_t> seed;         // train.seed (master_seed: gen-data)
  std::string out_dir = "runs";

  // sample / eval
  std::string checkpoint;          // checkpoint directory
  std::string sample_ref = "test:0";  // "<split>:<index>" reference pair
  std::string image_path;         // optional target first-frame container
  std::string split_name = "test";
  std::string corpus_dir;         // eval against an on-disk corpus instead

  // ablate axes, comma-separated; an empty axis keeps the base value
  std::string variants, corpus_sizes, pes, layer_sets, seeds;

  std::string help_text;  // populated when verb == "help"
};

// Parses argv (program name excluded). --help yields verb "help"; anything
// malformed (unknown verb, unknown flag, missing required flag) throws
// UsageError.
Command parse_args(const std::vector<std::string>& args);

// defaults <- config file <- --set overrides <- --seed, then normalize and
// validate. Unknown config or override keys throw before any work runs.
RunConfig resolve_config(const Command& cmd);

// Executes the verb and maps errors to exit codes (UsageError/ShapeError 1,
// DataError/ProtocolError 2, NumericError 3), printing diagnostics to
// stderr. Artifacts land under <out_dir>/<verb>-<config hash>-s<seed>/.
int dispatch(const Command& cmd);

// parse_args + dispatch; what main() calls.
int run_cli(int argc, const char* const* argv);

}  // namespace icvid
