#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "inactive_heads/analytics.hpp"
#include "inactive_heads/numeric.hpp"
#include "inactive_heads/records_io.hpp"
#include "inactive_heads/scores.hpp"

namespace ihead::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kTraceExt = ".tensors";

struct Writer {
  const RunConfig& cfg;
  std::string command;
  std::vector<std::string> written;

  fs::path prepare(const std::string& rel) {
    const fs::path p = cfg.out() / rel;
    fs::create_directories(p.parent_path());
    written.push_back(rel);
    return p;
  }

  std::vector<std::string> header() const {
    return {"config_hash=" + cfg.hash, "seeds: " + cfg.seeds_line(), "command=" + command};
  }

  std::map<std::string, std::string> metadata() const {
    return {{"config_hash", cfg.hash}, {"seeds", cfg.seeds_line()}, {"command", command}};
  }

  json stamp(json body) const {
    body["config_hash"] = cfg.hash;
    body["seeds"] = cfg.seeds_line();
    body["command"] = command;
    return body;
  }

  void text(const std::string& rel, const std::string& content) {
    std::ofstream out(prepare(rel), std::ios::binary);
    out << content;
    if (!out) throw std::runtime_error("cannot write " + rel);
  }

  void json_file(const std::string& rel, const json& body) { text(rel, stamp(body).dump(2) + "\n"); }

  // CSV with the standard comment header followed by `rows`.
  void csv(const std::string& rel, const std::string& rows, const std::vector<std::string>& extra = {}) {
    std::ostringstream s;
    for (const auto& h : header()) s << "# " << h << '\n';
    for (const auto& h : extra) s << "# " << h << '\n';
    s << rows;
    text(rel, s.str());
  }
};

std::string seq_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu", i);
  return buf;
}

std::string matrix_csv(const std::vector<std::string>& labels, const Eigen::MatrixXd& m, const std::string& corner) {
  std::ostringstream s;
  s << corner;
  for (const auto& l : labels) s << ',' << l;
  s << '\n';
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    s << labels[r];
    for (Eigen::Index c = 0; c < m.cols(); ++c) s << ',' << format_double(m(r, c));
    s << '\n';
  }
  return s.str();
}

json corpus_json(const Dataset& ds) {
  json seqs = json::array();
  for (const auto& s : ds) seqs.push_back(s);
  return json{{"sequences", seqs}};
}

Dataset corpus_or_generate(const RunConfig& cfg) {
  const fs::path p = cfg.out() / "corpus.json";
  if (!fs::exists(p)) return make_corpus(cfg.corpus, cfg.model.vocab_size);
  std::ifstream in(p);
  try {
    const json j = json::parse(in);
    return j.at("sequences").get<Dataset>();
  } catch (const json::exception& e) {
    throw data_error("corpus.json: " + std::string(e.what()));
  }
}

TransformerWeights weights_or_build(const RunConfig& cfg) {
  if (cfg.checkpoint) return load_weights(*cfg.checkpoint);
  const fs::path p = cfg.out() / "model.tensors";
  if (fs::exists(p)) return load_weights(p.string());
  return build_weights(cfg, cfg.model_seed);
}

std::vector<ThresholdPolicy> read_policies(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open policies file " + path.string() + " (run calibrate first)");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw data_error("policies: " + std::string(e.what()));
  }
  if (!j.contains("policies") || !j.at("policies").is_array()) throw data_error("policies: missing 'policies' array");
  std::vector<ThresholdPolicy> out;
  for (const auto& p : j.at("policies")) out.push_back(policy_from_json(p));
  return out;
}

// Higher-is-better view of a curve for ranking and tolerance checks.
Curve oriented(const Curve& c, Metric metric) {
  if (metric == Metric::agreement) return c;
  Curve out = c;
  for (auto& p : out.points) p.performance = -p.performance;
  return out;
}

void write_summaries(Writer& w, const std::vector<Curve>& curves, Metric metric, double tolerance,
                     const std::string& prefix) {
  std::vector<Curve> views;
  for (const auto& c : curves) views.push_back(oriented(c, metric));
  const double sign = metric == Metric::agreement ? 1.0 : -1.0;
  const double baseline = metric == Metric::agreement ? 1.0 : 0.0;

  std::ostringstream auc;
  auc << "rank,fn,normalized_auc\n";
  for (const auto& r : rank_by_auc(views)) {
    auc << r.rank << ',' << r.fn << ',' << (r.auc ? format_double(sign * *r.auc) : "") << '\n';
  }
  w.csv(prefix + "auc_ranking.csv", auc.str(),
        {"metric=" + std::string(to_string(metric)) +
         (metric == Metric::agreement ? " order=descending" : " order=ascending")});

  std::ostringstream mz;
  mz << "fn,max_percent_zeroed\n";
  for (const auto& v : views) {
    mz << v.fn << ',' << format_double(max_zeroed_within_tolerance(v, sign * baseline, tolerance)) << '\n';
  }
  w.csv(prefix + "max_zeroed.csv", mz.str(),
        {"metric=" + std::string(to_string(metric)) + " baseline=" + format_double(baseline) +
         " tolerance=" + format_double(tolerance) + " tolerance_mode=absolute"});
}

std::vector<double> pool_of(const std::vector<AttentionTrace>& traces, ScoreFn fn) {
  return collect_scores(traces, fn).samples;
}

std::vector<AttentionTrace> run_traces(const TransformerWeights& w, const Dataset& ds, int jobs) {
  std::vector<AttentionTrace> out;
  for (auto& b : run_baselines(w, ds, jobs)) out.push_back(std::move(b.trace));
  return out;
}

}  // namespace

TransformerWeights build_weights(const RunConfig& cfg, std::uint64_t seed) {
  TransformerWeights w = init_model(cfg.model, seed);
  for (const auto& p : cfg.plants) w = plant_heads(w, p);
  return w;
}

Dataset make_corpus(const CorpusSpec& spec, int vocab_size) {
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<int> len(spec.min_len, spec.max_len);
  std::uniform_int_distribution<int> tok(0, vocab_size - 1);
  Dataset ds(spec.n_sequences);
  for (auto& s : ds) {
    s.resize(len(rng));
    for (auto& t : s) t = tok(rng);
  }
  return ds;
}

std::vector<AttentionTrace> load_traces(const fs::path& dir, int jobs) {
  if (!fs::is_directory(dir)) throw data_error("trace directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == kTraceExt) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw data_error("no trace files in " + dir.string());
  std::vector<std::optional<AttentionTrace>> slots(files.size());
  parallel_for(files.size(), jobs, [&](std::size_t i) {
    try {
      slots[i] = load_trace(files[i].string());
    } catch (const data_error& e) {
      throw data_error(files[i].filename().string() + ": " + e.what());
    }
  });
  std::vector<AttentionTrace> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  for (const auto& t : out) {
    if (!(t.config() == out.front().config())) throw data_error("traces disagree on the model config");
  }
  return out;
}

std::vector<std::string> cmd_simulate(const RunConfig& cfg, const RunOptions& opt) {
  Writer w{cfg, "simulate", {}};
  const TransformerWeights weights = cfg.checkpoint ? load_weights(*cfg.checkpoint) : build_weights(cfg, cfg.model_seed);
  const Dataset ds = make_corpus(cfg.corpus, cfg.model.vocab_size);

  save_weights(weights, w.prepare("model.tensors").string(), w.metadata());
  w.json_file("corpus.json", corpus_json(ds));

  std::vector<std::optional<AttentionTrace>> traces(ds.size());
  parallel_for(ds.size(), opt.jobs, [&](std::size_t i) { traces[i] = forward(weights, ds[i], std::nullopt, seq_name(i)).trace; });
  for (std::size_t i = 0; i < ds.size(); ++i) {
    save_trace(*traces[i], w.prepare("traces/" + seq_name(i) + kTraceExt).string(), w.metadata());
  }

  json plants = json::array();
  for (const auto& p : cfg.plants) {
    json targets = json::array();
    for (const auto& t : p.targets) targets.push_back({t.layer, t.head});
    plants.push_back({{"kind", std::string(to_string(p.kind))}, {"scale", p.scale}, {"targets", targets}});
  }
  json lengths = json::array();
  for (const auto& s : ds) lengths.push_back(s.size());
  w.json_file("simulate.json", {{"n_sequences", ds.size()}, {"lengths", lengths}, {"plants", plants}});
  return w.written;
}

std::vector<std::string> cmd_score(const RunConfig& cfg, const RunOptions& opt) {
  Writer w{cfg, "score", {}};
  const auto traces = load_traces(cfg.traces_dir(), opt.jobs);
  for (ScoreFn fn : cfg.score_fns) {
    const std::string id(to_string(fn));
    std::vector<ScoreMatrix> scores(traces.size());
    parallel_for(traces.size(), opt.jobs, [&](std::size_t i) { scores[i] = score_all_heads(traces[i], fn); });
    std::ostringstream pool;
    pool << "sequence_id,layer,head,score\n";
    for (const auto& s : scores) {
      std::ostringstream one;
      write_score_matrix_csv(one, s, w.header());
      w.text("scores/" + id + "/" + s.sequence_id + ".csv", one.str());
      for (int l = 0; l < s.n_layers(); ++l) {
        for (int h = 0; h < s.n_heads(); ++h) {
          pool << s.sequence_id << ',' << l << ',' << h << ',' << format_double(s.values(h, l)) << '\n';
        }
      }
    }
    w.csv("scores/" + id + ".pool.csv", pool.str(), {"fn=" + id});
  }
  return w.written;
}

std::vector<std::string> cmd_calibrate(const RunConfig& cfg, const RunOptions& opt) {
  Writer w{cfg, "calibrate", {}};
  const auto traces = load_traces(cfg.traces_dir(), opt.jobs);
  json policies = json::array();
  for (ScoreFn fn : cfg.score_fns) {
    const ScorePool pool = collect_scores(traces, fn);
    for (double p : cfg.quantile_grid) policies.push_back(to_json(quantile_threshold(pool, p)));
  }
  w.json_file("policies.json", {{"n_traces", traces.size()}, {"policies", policies}});
  return w.written;
}

std::vector<std::string> cmd_intervene(const RunConfig& cfg, const RunOptions& opt) {
  Writer w{cfg, "intervene", {}};
  const auto policies = read_policies(cfg.policies_path());
  const TransformerWeights weights = weights_or_build(cfg);
  const Dataset ds = corpus_or_generate(cfg);
  const auto baselines = run_baselines(weights, ds, opt.jobs);

  std::vector<std::string> order;
  std::map<std::string, std::vector<EvalRecord>> by_fn;
  std::ostringstream layerwise;
  layerwise << "fn,p,tau";
  for (int l = 0; l < weights.config.n_layers; ++l) layerwise << ",layer_" << l;
  layerwise << '\n';
  std::vector<AttentionTrace> traces;
  for (const auto& b : baselines) traces.push_back(b.trace);

  for (const auto& p : policies) {
    const std::string id(to_string(p.fn));
    if (!by_fn.count(id)) order.push_back(id);
    by_fn[id].push_back(evaluate_with_intervention(weights, ds, baselines, p, cfg.metric, opt.jobs));
    layerwise << id << ',' << (p.quantile_p ? format_double(*p.quantile_p) : "") << ',' << format_double(p.tau);
    for (double f : layerwise_inactive_fraction(traces, p)) layerwise << ',' << format_double(f);
    layerwise << '\n';
  }
  std::vector<Curve> curves;
  std::vector<EvalRecord> records;
  for (const auto& id : order) {
    curves.push_back(make_curve(id, by_fn[id]));
    records.insert(records.end(), by_fn[id].begin(), by_fn[id].end());
  }
  const Curve rnd = random_curve(weights, ds, baselines, cfg.quantile_grid, cfg.random_seeds, cfg.metric, opt.jobs);
  records.insert(records.end(), rnd.points.begin(), rnd.points.end());
  curves.push_back(rnd);

  std::ostringstream csv;
  write_eval_records_csv(csv, records, w.header());
  w.text("records.csv", csv.str());
  json cj = json::array();
  for (const auto& c : curves) cj.push_back(to_json(c));
  w.json_file("curves.json", {{"metric", std::string(to_string(cfg.metric))}, {"curves", cj}});
  w.csv("layerwise.csv", layerwise.str());
  write_summaries(w, curves, cfg.metric, cfg.tolerance, "");
  return w.written;
}

std::vector<std::string> cmd_compare(const RunConfig& cfg, const RunOptions& opt) {
  Writer w{cfg, "compare", {}};
  const auto traces = load_traces(cfg.traces_dir(), opt.jobs);
  std::vector<std::string> labels;
  for (ScoreFn fn : cfg.score_fns) labels.emplace_back(to_string(fn));
  const std::string frac = "target_fraction=" + format_double(cfg.target_fraction);
  const auto [iou_m, prec_m] = agreement_study(traces, cfg.score_fns, cfg.target_fraction);
  w.csv("compare/iou.csv", matrix_csv(labels, iou_m.values, "fn"), {frac});
  w.csv("compare/precision.csv", matrix_csv(labels, prec_m.values, "prediction\\truth"), {frac});

  // One pool per model seed, same config, plants and corpus.
  const Dataset ds = make_corpus(cfg.corpus, cfg.model.vocab_size);
  std::vector<std::vector<AttentionTrace>> per_model;
  std::vector<std::string> models;
  for (auto seed : cfg.compare_model_seeds) {
    per_model.push_back(run_traces(build_weights(cfg, seed), ds, opt.jobs));
    models.push_back("seed_" + std::to_string(seed));
  }
  for (ScoreFn fn : cfg.score_fns) {
    std::vector<ScorePool> pools;
    for (const auto& t : per_model) pools.push_back({fn, pool_of(t, fn)});
    const DistanceMatrix d = distribution_study(pools, models);
    w.csv("compare/wasserstein_" + std::string(to_string(fn)) + ".csv", matrix_csv(models, d.values, "model"),
          {"fn=" + std::string(to_string(fn)) + " pooling=" + d.pooling_mode});
  }

  if (cfg.pca) {
    CorpusSpec probe{1, cfg.pca->seq_len, cfg.pca->seq_len, cfg.corpus.seed};
    const Dataset one = make_corpus(probe, cfg.model.vocab_size);
    const TransformerWeights weights = weights_or_build(cfg);
    const std::vector<AttentionTrace> t = {forward(weights, one[0], std::nullopt, "pca_probe").trace};
    const PcaSummary pca = attention_pca(t, cfg.pca->n_components);
    TensorContainer c = pca_to_container(pca);
    for (const auto& [k, v] : w.metadata()) c.metadata[k] = v;
    save_container(c, w.prepare("compare/pca.tensors").string());
    std::ostringstream s;
    s << "component,explained_variance_ratio\n";
    for (int k = 0; k < pca.n_components; ++k) s << k << ',' << format_double(pca.explained_variance_ratio[k]) << '\n';
    w.csv("compare/pca.csv", s.str(), {std::string("degenerate=") + (pca.degenerate ? "true" : "false")});
  }
  return w.written;
}

std::vector<std::string> cmd_report(const RunConfig& cfg, const RunOptions&) {
  Writer w{cfg, "report", {}};
  std::ifstream in(cfg.records_path());
  if (!in) throw data_error("cannot open records file " + cfg.records_path().string());
  const auto records = read_eval_records_csv(in);
  if (records.empty()) throw data_error("records file has no rows");
  Metric metric;
  try {
    metric = parse_metric(records.front().metric_id);
  } catch (const std::invalid_argument& e) {
    throw data_error(std::string("records: ") + e.what());
  }
  for (const auto& r : records) {
    if (r.metric_id != records.front().metric_id) throw data_error("records mix metrics");
  }
  write_summaries(w, curves_from_records(records), metric, cfg.tolerance, "report_");
  return w.written;
}

}  // namespace ihead::cli
