#pragma once

#include <string>
#include <vector>

#include "run_config.hpp"

namespace ihead::cli {

struct RunOptions {
  int jobs = 1;
};

// Each command writes under cfg.output_dir and returns the files it wrote,
// relative to the output directory.
std::vector<std::string> cmd_simulate(const RunConfig& cfg, const RunOptions& opt);
std::vector<std::string> cmd_score(const RunConfig& cfg, const RunOptions& opt);
std::vector<std::string> cmd_calibrate(const RunConfig& cfg, const RunOptions& opt);
std::vector<std::string> cmd_intervene(const RunConfig& cfg, const RunOptions& opt);
std::vector<std::string> cmd_compare(const RunConfig& cfg, const RunOptions& opt);
std::vector<std::string> cmd_report(const RunConfig& cfg, const RunOptions& opt);

// Shared with tests.
TransformerWeights build_weights(const RunConfig& cfg, std::uint64_t seed);
Dataset make_corpus(const CorpusSpec& spec, int vocab_size);
std::vector<AttentionTrace> load_traces(const std::filesystem::path& dir, int jobs);

}  // namespace ihead::cli
