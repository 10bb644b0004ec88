#include "run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace ihead::cli {

using json = nlohmann::json;

namespace {

void require_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw config_error(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw config_error(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw config_error(where + ": missing '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(where + ": '" + key + "' has the wrong type");
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, const std::string& where, T fallback) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

std::uint64_t get_seed(const json& j, const std::string& key, const std::string& where, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_unsigned()) throw config_error(where + ": '" + key + "' must be a non-negative integer");
  return j.at(key).get<std::uint64_t>();
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void require_path(const std::optional<std::string>& p, const char* key) {
  if (p && !std::filesystem::exists(*p)) throw config_error(std::string(key) + ": path does not exist: " + *p);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string RunConfig::seeds_line() const {
  std::ostringstream s;
  s << "model=" << model_seed << " corpus=" << corpus.seed << " random=";
  for (std::size_t i = 0; i < random_seeds.size(); ++i) s << (i ? ";" : "") << random_seeds[i];
  return s.str();
}

RunConfig parse_run_config(const json& input, const Overrides& overrides) {
  json j = input;
  require_keys(j, "config",
               {"model", "corpus", "traces", "policies", "records", "score_fns", "quantile_grid", "metric",
                "tolerance", "random_seeds", "target_fraction", "compare", "output_dir"});
  if (overrides.seed) {
    if (!j.contains("model")) j["model"] = json::object();
    if (!j.contains("corpus")) j["corpus"] = json::object();
    j["model"]["seed"] = *overrides.seed;
    j["corpus"]["seed"] = *overrides.seed;
  }

  RunConfig c;
  const json model = get<json>(j, "model", "config");
  require_keys(model, "model",
               {"n_layers", "n_q_heads", "n_kv_heads", "d_model", "vocab_size", "max_seq_len", "seed", "plants",
                "checkpoint"});
  const int n_q = get<int>(model, "n_q_heads", "model");
  try {
    c.model = make_config(get<int>(model, "n_layers", "model"), n_q, get_or<int>(model, "n_kv_heads", "model", n_q),
                          get<int>(model, "d_model", "model"), get<int>(model, "vocab_size", "model"),
                          get<int>(model, "max_seq_len", "model"));
  } catch (const std::invalid_argument& e) {
    throw config_error(std::string("model: ") + e.what());
  }
  c.model_seed = get_seed(model, "seed", "model", 0);
  if (model.contains("checkpoint")) c.checkpoint = get<std::string>(model, "checkpoint", "model");
  for (const auto& p : get_or<json>(model, "plants", "model", json::array())) {
    require_keys(p, "plant", {"kind", "targets", "scale"});
    PlantSpec spec;
    try {
      spec.kind = parse_plant_kind(get<std::string>(p, "kind", "plant"));
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
    spec.scale = get_or<double>(p, "scale", "plant", spec.scale);
    for (const auto& t : get<json>(p, "targets", "plant")) {
      if (!t.is_array() || t.size() != 2) throw config_error("plant: targets are [layer, head] pairs");
      spec.targets.push_back({t[0].get<int>(), t[1].get<int>()});
    }
    c.plants.push_back(std::move(spec));
  }

  const json corpus = get_or<json>(j, "corpus", "config", json::object());
  require_keys(corpus, "corpus", {"n_sequences", "min_len", "max_len", "seed"});
  c.corpus.n_sequences = get_or<int>(corpus, "n_sequences", "corpus", c.corpus.n_sequences);
  c.corpus.min_len = get_or<int>(corpus, "min_len", "corpus", c.corpus.min_len);
  c.corpus.max_len = get_or<int>(corpus, "max_len", "corpus", c.corpus.max_len);
  c.corpus.seed = get_seed(corpus, "seed", "corpus", 0);
  if (c.corpus.n_sequences < 1) throw config_error("corpus: n_sequences must be positive");
  if (c.corpus.min_len < 1 || c.corpus.min_len > c.corpus.max_len) throw config_error("corpus: need 1 <= min_len <= max_len");
  if (c.corpus.max_len > c.model.max_seq_len) throw config_error("corpus: max_len exceeds model.max_seq_len");

  if (j.contains("traces")) c.traces = get<std::string>(j, "traces", "config");
  if (j.contains("policies")) c.policies = get<std::string>(j, "policies", "config");
  if (j.contains("records")) c.records = get<std::string>(j, "records", "config");
  require_path(c.checkpoint, "model.checkpoint");
  require_path(c.traces, "traces");
  require_path(c.policies, "policies");
  require_path(c.records, "records");

  for (const auto& id : get<std::vector<std::string>>(j, "score_fns", "config")) {
    try {
      c.score_fns.push_back(parse_score_fn(id));
    } catch (const std::invalid_argument& e) {
      throw config_error(e.what());
    }
  }
  if (c.score_fns.empty()) throw config_error("score_fns: at least one score function is required");
  c.quantile_grid = get_or<std::vector<double>>(j, "quantile_grid", "config", c.quantile_grid);
  if (c.quantile_grid.empty()) throw config_error("quantile_grid: must not be empty");
  for (double p : c.quantile_grid) {
    if (!(p >= 0.0 && p <= 100.0)) throw config_error("quantile_grid: values must lie in [0, 100]");
  }
  try {
    c.metric = parse_metric(get_or<std::string>(j, "metric", "config", "agreement"));
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  c.tolerance = get_or<double>(j, "tolerance", "config", c.tolerance);
  if (!(c.tolerance >= 0.0)) throw config_error("tolerance: must be non-negative");
  if (j.contains("random_seeds")) {
    c.random_seeds.clear();
    for (const auto& s : j.at("random_seeds")) {
      if (!s.is_number_unsigned()) throw config_error("random_seeds: entries must be non-negative integers");
      c.random_seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (c.random_seeds.empty()) throw config_error("random_seeds: must not be empty");
  c.target_fraction = get_or<double>(j, "target_fraction", "config", c.target_fraction);
  if (!(c.target_fraction > 0.0 && c.target_fraction <= 100.0)) throw config_error("target_fraction: must lie in (0, 100]");

  const json compare = get_or<json>(j, "compare", "config", json::object());
  require_keys(compare, "compare", {"model_seeds", "pca"});
  if (compare.contains("model_seeds")) {
    for (const auto& s : compare.at("model_seeds")) {
      if (!s.is_number_unsigned()) throw config_error("compare.model_seeds: entries must be non-negative integers");
      c.compare_model_seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (c.compare_model_seeds.empty()) c.compare_model_seeds.push_back(c.model_seed);
  if (compare.contains("pca")) {
    const json& p = compare.at("pca");
    require_keys(p, "compare.pca", {"seq_len", "n_components"});
    PcaSpec spec;
    spec.seq_len = get_or<int>(p, "seq_len", "compare.pca", spec.seq_len);
    spec.n_components = get_or<int>(p, "n_components", "compare.pca", spec.n_components);
    if (spec.seq_len < 1 || spec.seq_len > c.model.max_seq_len) throw config_error("compare.pca: invalid seq_len");
    if (spec.n_components < 1) throw config_error("compare.pca: n_components must be positive");
    c.pca = spec;
  }

  c.output_dir = get_or<std::string>(j, "output_dir", "config", c.output_dir);
  if (overrides.output_dir) c.output_dir = *overrides.output_dir;
  j.erase("output_dir");
  c.canonical = j;
  c.hash = hex(fnv1a64(j.dump()));
  return c;
}

RunConfig load_run_config(const std::string& path, const Overrides& overrides) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(j, overrides);
}

}  // namespace ihead::cli
