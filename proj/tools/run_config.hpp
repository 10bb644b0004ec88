#pragma once

// Declarative run configuration for the ihead CLI.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "inactive_heads/intervention.hpp"
#include "inactive_heads/transformer.hpp"

namespace ihead::cli {

// Invalid or inconsistent configuration (exit code 2).
class config_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusSpec {
  int n_sequences = 16;
  int min_len = 10;
  int max_len = 3000;
  std::uint64_t seed = 0;
};

struct PcaSpec {
  int seq_len = 16;
  int n_components = 4;
};

struct RunConfig {
  ModelConfig model;
  std::uint64_t model_seed = 0;
  std::vector<PlantSpec> plants;
  std::optional<std::string> checkpoint;  // load weights instead of building them
  CorpusSpec corpus;
  std::optional<std::string> traces;      // default <output_dir>/traces
  std::optional<std::string> policies;    // default <output_dir>/policies.json
  std::optional<std::string> records;     // default <output_dir>/records.csv
  std::vector<ScoreFn> score_fns;
  std::vector<double> quantile_grid = kDefaultQuantileGrid;
  Metric metric = Metric::agreement;
  double tolerance = 0.01;
  std::vector<std::uint64_t> random_seeds = {0};
  double target_fraction = 10.0;
  std::vector<std::uint64_t> compare_model_seeds;  // default {model_seed}
  std::optional<PcaSpec> pca;
  std::string output_dir = "ihead_out";

  nlohmann::json canonical;  // effective config, minus output_dir
  std::string hash;          // 16 hex digits, FNV-1a 64 of canonical.dump()

  std::filesystem::path out() const { return output_dir; }
  std::filesystem::path traces_dir() const { return traces ? std::filesystem::path(*traces) : out() / "traces"; }
  std::filesystem::path policies_path() const { return policies ? std::filesystem::path(*policies) : out() / "policies.json"; }
  std::filesystem::path records_path() const { return records ? std::filesystem::path(*records) : out() / "records.csv"; }

  // "model=<s> corpus=<s> random=<s;s>" for output headers.
  std::string seeds_line() const;
};

struct Overrides {
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;  // replaces model.seed and corpus.seed
};

/// Parses and validates; throws config_error.
RunConfig parse_run_config(const nlohmann::json& j, const Overrides& overrides = {});
RunConfig load_run_config(const std::string& path, const Overrides& overrides = {});

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace ihead::cli
