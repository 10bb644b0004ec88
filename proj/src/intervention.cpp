#include "inactive_heads/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "inactive_heads/numeric.hpp"
#include "inactive_heads/scores.hpp"

namespace ihead {

std::string_view to_string(Metric metric) { return metric == Metric::agreement ? "agreement" : "kl"; }

Metric parse_metric(std::string_view id) {
  if (id == "agreement") return Metric::agreement;
  if (id == "kl") return Metric::kl;
  throw std::invalid_argument("unknown metric: " + std::string(id));
}

Curve make_curve(std::string fn, std::vector<EvalRecord> records) {
  std::stable_sort(records.begin(), records.end(),
                   [](const EvalRecord& a, const EvalRecord& b) { return a.percent_zeroed < b.percent_zeroed; });
  Curve curve;
  curve.fn = std::move(fn);
  for (auto& r : records) {
    if (!curve.points.empty() && curve.points.back().percent_zeroed == r.percent_zeroed) {
      auto& kept = curve.points.back();
      if (r.tau && (!kept.tau || *r.tau > *kept.tau)) kept = std::move(r);
      continue;
    }
    curve.points.push_back(std::move(r));
  }
  return curve;
}

std::vector<BaselinePass> run_baselines(const TransformerWeights& weights, const Dataset& dataset, int jobs) {
  std::vector<std::optional<BaselinePass>> slots(dataset.size());
  parallel_for(dataset.size(), jobs, [&](std::size_t i) {
    ForwardResult r = forward(weights, dataset[i], std::nullopt, "seq_" + std::to_string(i));
    slots[i] = BaselinePass{std::move(r.logits), std::move(r.trace)};
  });
  std::vector<BaselinePass> out;
  out.reserve(slots.size());
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

namespace {

VectorXd log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const double m = row.maxCoeff();
  const double lse = m + std::log((row.array() - m).exp().sum());
  return (row.array() - lse).transpose();
}

struct SequenceMetric {
  double sum = 0.0;  // matches, or summed KL
  std::size_t positions = 0;
};

SequenceMetric compare_logits(const MatrixXd& baseline, const MatrixXd& ablated, Metric metric) {
  SequenceMetric out;
  out.positions = static_cast<std::size_t>(baseline.rows());
  KahanSum sum;
  for (Eigen::Index i = 0; i < baseline.rows(); ++i) {
    if (metric == Metric::agreement) {
      Eigen::Index a = 0, b = 0;
      baseline.row(i).maxCoeff(&a);
      ablated.row(i).maxCoeff(&b);
      if (a == b) sum += 1.0;
    } else {
      const VectorXd lp = log_softmax(baseline.row(i));
      const VectorXd lq = log_softmax(ablated.row(i));
      sum += std::max(0.0, (lp.array().exp() * (lp - lq).array()).sum());
    }
  }
  out.sum = sum.value();
  return out;
}

void check_dataset(const Dataset& dataset, std::span<const BaselinePass> baselines) {
  if (dataset.empty()) throw std::invalid_argument("intervention: empty dataset");
  if (baselines.size() != dataset.size()) throw std::invalid_argument("intervention: baseline count mismatch");
}

}  // namespace

EvalRecord evaluate_masks(const TransformerWeights& weights, const Dataset& dataset,
                          std::span<const BaselinePass> baselines, std::span<const HeadMask> masks, Metric metric,
                          int jobs) {
  check_dataset(dataset, baselines);
  if (masks.size() != dataset.size()) throw std::invalid_argument("intervention: mask count mismatch");
  std::vector<SequenceMetric> per_seq(dataset.size());
  parallel_for(dataset.size(), jobs, [&](std::size_t i) {
    if (masks[i].count() == 0) {
      per_seq[i] = compare_logits(baselines[i].logits, baselines[i].logits, metric);
      return;
    }
    const ForwardResult ablated = forward(weights, dataset[i], masks[i]);
    per_seq[i] = compare_logits(baselines[i].logits, ablated.logits, metric);
  });
  KahanSum total;
  std::size_t positions = 0;
  for (const auto& s : per_seq) {
    total += s.sum;
    positions += s.positions;
  }
  EvalRecord r;
  r.metric_id = std::string(to_string(metric));
  r.performance = total.value() / static_cast<double>(positions);
  r.percent_zeroed = percent_zeroed(masks);
  r.n_sequences = dataset.size();
  return r;
}

EvalRecord evaluate_with_intervention(const TransformerWeights& weights, const Dataset& dataset,
                                      std::span<const BaselinePass> baselines, const ThresholdPolicy& policy,
                                      Metric metric, int jobs) {
  check_dataset(dataset, baselines);
  std::vector<HeadMask> masks;
  masks.reserve(baselines.size());
  for (const auto& b : baselines) {
    if (!(b.trace.config() == weights.config)) throw data_error("intervention: trace config mismatch");
    masks.push_back(build_mask(score_all_heads(b.trace, policy.fn), policy));
  }
  EvalRecord r = evaluate_masks(weights, dataset, baselines, masks, metric, jobs);
  r.fn = std::string(to_string(policy.fn));
  r.p = policy.quantile_p;
  r.tau = policy.tau;
  return r;
}

EvalRecord evaluate_with_intervention(const TransformerWeights& weights, const Dataset& dataset,
                                      const ThresholdPolicy& policy, Metric metric, int jobs) {
  if (dataset.empty()) throw std::invalid_argument("intervention: empty dataset");
  const auto baselines = run_baselines(weights, dataset, jobs);
  return evaluate_with_intervention(weights, dataset, baselines, policy, metric, jobs);
}

std::vector<HeadMask> random_masks(const ModelConfig& config, std::size_t n_sequences, double fraction,
                                   std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 100.0)) throw std::invalid_argument("random_masks: fraction must lie in [0, 100]");
  const int total = config.total_heads();
  const int k = static_cast<int>(std::lround(fraction * total / 100.0));
  std::mt19937_64 rng(seed);
  std::vector<int> order(total);
  std::vector<HeadMask> masks;
  masks.reserve(n_sequences);
  for (std::size_t s = 0; s < n_sequences; ++s) {
    std::iota(order.begin(), order.end(), 0);
    // Partial Fisher-Yates: the first k entries are a uniform k-subset.
    for (int i = 0; i < k; ++i) {
      std::uniform_int_distribution<int> pick(i, total - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    HeadMask m = HeadMask::none(config);
    for (int i = 0; i < k; ++i) m.flags(order[i] % config.n_q_heads, order[i] / config.n_q_heads) = true;
    std::ostringstream prov;
    prov << "random(" << fraction << ")";
    m.provenance = prov.str();
    masks.push_back(std::move(m));
  }
  return masks;
}

EvalRecord random_baseline(const TransformerWeights& weights, const Dataset& dataset,
                           std::span<const BaselinePass> baselines, double fraction, std::uint64_t seed, Metric metric,
                           int jobs) {
  check_dataset(dataset, baselines);
  const auto masks = random_masks(weights.config, dataset.size(), fraction, seed);
  EvalRecord r = evaluate_masks(weights, dataset, baselines, masks, metric, jobs);
  r.fn = "random";
  r.p = fraction;
  return r;
}

EvalRecord random_baseline(const TransformerWeights& weights, const Dataset& dataset, double fraction,
                           std::uint64_t seed, Metric metric, int jobs) {
  if (dataset.empty()) throw std::invalid_argument("intervention: empty dataset");
  const auto baselines = run_baselines(weights, dataset, jobs);
  return random_baseline(weights, dataset, baselines, fraction, seed, metric, jobs);
}

Curve accuracy_curve(const TransformerWeights& weights, const Dataset& dataset,
                     std::span<const BaselinePass> baselines, ScoreFn fn, const std::vector<double>& quantile_grid,
                     Metric metric, int jobs) {
  check_dataset(dataset, baselines);
  std::vector<ScoreMatrix> scores;
  scores.reserve(baselines.size());
  for (const auto& b : baselines) scores.push_back(score_all_heads(b.trace, fn));
  const ScorePool pool = pool_from_matrices(scores);

  std::vector<EvalRecord> records;
  for (double p : quantile_grid) {
    const ThresholdPolicy policy = quantile_threshold(pool, p);
    std::vector<HeadMask> masks;
    masks.reserve(scores.size());
    for (const auto& s : scores) masks.push_back(build_mask(s, policy));
    EvalRecord r = evaluate_masks(weights, dataset, baselines, masks, metric, jobs);
    r.fn = std::string(to_string(fn));
    r.p = p;
    r.tau = policy.tau;
    records.push_back(std::move(r));
  }
  return make_curve(std::string(to_string(fn)), std::move(records));
}

Curve accuracy_curve(const TransformerWeights& weights, const Dataset& dataset, ScoreFn fn,
                     const std::vector<double>& quantile_grid, Metric metric, int jobs) {
  if (dataset.empty()) throw std::invalid_argument("intervention: empty dataset");
  const auto baselines = run_baselines(weights, dataset, jobs);
  return accuracy_curve(weights, dataset, baselines, fn, quantile_grid, metric, jobs);
}

Curve random_curve(const TransformerWeights& weights, const Dataset& dataset, std::span<const BaselinePass> baselines,
                   const std::vector<double>& fractions, std::span<const std::uint64_t> seeds, Metric metric,
                   int jobs) {
  if (seeds.empty()) throw std::invalid_argument("random_curve: no seeds");
  std::vector<EvalRecord> records;
  for (double f : fractions) {
    KahanSum perf, pct;
    EvalRecord avg;
    for (auto seed : seeds) {
      avg = random_baseline(weights, dataset, baselines, f, seed, metric, jobs);
      perf += avg.performance;
      pct += avg.percent_zeroed;
    }
    avg.performance = perf.value() / static_cast<double>(seeds.size());
    avg.percent_zeroed = pct.value() / static_cast<double>(seeds.size());
    records.push_back(std::move(avg));
  }
  return make_curve("random", std::move(records));
}

std::optional<double> normalized_auc(const Curve& curve) {
  if (curve.points.size() < 2) return std::nullopt;
  const double x0 = curve.points.front().percent_zeroed;
  const double x1 = curve.points.back().percent_zeroed;
  if (!(x1 > x0)) return std::nullopt;
  KahanSum area;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += 0.5 * (b.percent_zeroed - a.percent_zeroed) * (a.performance + b.performance);
  }
  return area.value() / (x1 - x0);
}

double max_zeroed_within_tolerance(const Curve& curve, double baseline, double tolerance) {
  double best = 0.0;
  for (const auto& p : curve.points) {
    if (p.performance >= baseline - tolerance) best = std::max(best, p.percent_zeroed);
  }
  return best;
}

std::vector<RankedCurve> rank_by_auc(std::span<const Curve> curves) {
  std::vector<RankedCurve> out;
  for (const auto& c : curves) out.push_back({c.fn, normalized_auc(c), 0});
  std::stable_sort(out.begin(), out.end(), [](const RankedCurve& a, const RankedCurve& b) {
    if (a.auc.has_value() != b.auc.has_value()) return a.auc.has_value();
    return a.auc && *a.auc > *b.auc;
  });
  int rank = 0;
  for (auto& r : out) {
    if (r.auc) r.rank = ++rank;
  }
  return out;
}

std::vector<double> layerwise_inactive_fraction(std::span<const AttentionTrace> traces, const ThresholdPolicy& policy) {
  if (traces.empty()) throw std::invalid_argument("layerwise_inactive_fraction: no traces");
  const ModelConfig& c = traces.front().config();
  std::vector<KahanSum> sums(c.n_layers);
  for (const auto& t : traces) {
    if (!(t.config() == c)) throw data_error("layerwise_inactive_fraction: config mismatch");
    const HeadMask m = build_mask(score_all_heads(t, policy.fn), policy);
    for (int l = 0; l < c.n_layers; ++l) {
      sums[l] += 100.0 * static_cast<double>(m.flags.col(l).count()) / static_cast<double>(c.n_q_heads);
    }
  }
  std::vector<double> out(c.n_layers);
  for (int l = 0; l < c.n_layers; ++l) out[l] = sums[l].value() / static_cast<double>(traces.size());
  return out;
}

std::vector<double> seqlen_sweep(const TransformerWeights& weights, const TokenSequence& tokens,
                                 const ThresholdPolicy& policy, const std::vector<int>& prefix_lengths) {
  std::vector<double> out;
  out.reserve(prefix_lengths.size());
  for (int len : prefix_lengths) {
    if (len < 1 || len > static_cast<int>(tokens.size())) throw std::invalid_argument("seqlen_sweep: invalid prefix length");
    const ForwardResult r = forward(weights, std::span<const int>(tokens.data(), static_cast<std::size_t>(len)));
    const HeadMask m = build_mask(score_all_heads(r.trace, policy.fn), policy);
    out.push_back(100.0 * static_cast<double>(m.count()) / static_cast<double>(m.size()));
  }
  return out;
}

}  // namespace ihead
