#pragma once

// Zero-out interventions: evaluate masked forward passes against the unablated
// model, build performance-vs-%-zeroed curves, and summarize them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inactive_heads/calibration.hpp"
#include "inactive_heads/transformer.hpp"

namespace ihead {

// Top-1 agreement with the unablated model (higher is better) or mean
// KL(baseline || ablated) over positions (lower is better).
enum class Metric { agreement, kl };

std::string_view to_string(Metric metric);
Metric parse_metric(std::string_view id);  // throws std::invalid_argument

inline const std::vector<double> kDefaultQuantileGrid = {0, 5, 10, 15, 20, 25, 30};

struct EvalRecord {
  std::string fn;              // score function id, or "random"
  std::optional<double> p;     // quantile p, or the random fraction
  std::optional<double> tau;   // absent for random masks
  double percent_zeroed = 0.0;
  std::string metric_id;
  double performance = 0.0;
  std::size_t n_sequences = 0;
};

struct Curve {
  std::string fn;
  std::vector<EvalRecord> points;  // strictly increasing percent_zeroed
};

/// Sorts by percent_zeroed and keeps, among points with identical x, the one
/// with the largest tau (the first one when tau is absent).
Curve make_curve(std::string fn, std::vector<EvalRecord> records);

using TokenSequence = std::vector<int>;
using Dataset = std::vector<TokenSequence>;

struct BaselinePass {
  MatrixXd logits;
  AttentionTrace trace;
};

std::vector<BaselinePass> run_baselines(const TransformerWeights& weights, const Dataset& dataset, int jobs = 1);

/// Compares masked forwards to the unablated baselines. masks[i] applies to
/// dataset[i]; the record's fn/p/tau fields are left for the caller.
EvalRecord evaluate_masks(const TransformerWeights& weights, const Dataset& dataset,
                          std::span<const BaselinePass> baselines, std::span<const HeadMask> masks,
                          Metric metric, int jobs = 1);

EvalRecord evaluate_with_intervention(const TransformerWeights& weights, const Dataset& dataset,
                                      const ThresholdPolicy& policy, Metric metric, int jobs = 1);
EvalRecord evaluate_with_intervention(const TransformerWeights& weights, const Dataset& dataset,
                                      std::span<const BaselinePass> baselines, const ThresholdPolicy& policy,
                                      Metric metric, int jobs = 1);

/// Zeroes round(fraction * total_heads / 100) heads per forward pass, drawn
/// uniformly without replacement and afresh for every sequence.
std::vector<HeadMask> random_masks(const ModelConfig& config, std::size_t n_sequences, double fraction,
                                   std::uint64_t seed);
EvalRecord random_baseline(const TransformerWeights& weights, const Dataset& dataset, double fraction,
                           std::uint64_t seed, Metric metric, int jobs = 1);
EvalRecord random_baseline(const TransformerWeights& weights, const Dataset& dataset,
                           std::span<const BaselinePass> baselines, double fraction, std::uint64_t seed,
                           Metric metric, int jobs = 1);

/// One record per grid point with tau calibrated on `dataset` itself.
Curve accuracy_curve(const TransformerWeights& weights, const Dataset& dataset, ScoreFn fn,
                     const std::vector<double>& quantile_grid = kDefaultQuantileGrid,
                     Metric metric = Metric::agreement, int jobs = 1);
Curve accuracy_curve(const TransformerWeights& weights, const Dataset& dataset,
                     std::span<const BaselinePass> baselines, ScoreFn fn, const std::vector<double>& quantile_grid,
                     Metric metric, int jobs = 1);

/// Random-mask curve; performance at each fraction is averaged over seeds.
Curve random_curve(const TransformerWeights& weights, const Dataset& dataset, std::span<const BaselinePass> baselines,
                   const std::vector<double>& fractions, std::span<const std::uint64_t> seeds, Metric metric,
                   int jobs = 1);

/// Trapezoidal area divided by the x span; absent with fewer than two
/// distinct x values.
std::optional<double> normalized_auc(const Curve& curve);

double max_zeroed_within_tolerance(const Curve& curve, double baseline, double tolerance);

struct RankedCurve {
  std::string fn;
  std::optional<double> auc;
  int rank = 0;  // 1-based; 0 when auc is absent
};

// Descending AUC (metric where higher is better); curves without an AUC come
// last, unranked. Ties keep input order.
std::vector<RankedCurve> rank_by_auc(std::span<const Curve> curves);

/// Per-layer mean percentage of flagged heads.
std::vector<double> layerwise_inactive_fraction(std::span<const AttentionTrace> traces,
                                                const ThresholdPolicy& policy);

/// Percentage of flagged heads on each prefix of `tokens`.
std::vector<double> seqlen_sweep(const TransformerWeights& weights, const TokenSequence& tokens,
                                 const ThresholdPolicy& policy, const std::vector<int>& prefix_lengths);

}  // namespace ihead
