#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inactive_heads/trace.hpp"
#include "inactive_heads/types.hpp"

namespace ihead {

struct ThresholdPolicy {
  ScoreFn fn = ScoreFn::AHON_LN;
  double tau = 0.0;
  std::optional<double> quantile_p;  // percentage that produced tau, if any
  std::string source;
};

// Head scores pooled over all heads of all calibration sequences.
struct ScorePool {
  ScoreFn fn = ScoreFn::AHON_LN;
  std::vector<double> samples;

  std::size_t count() const { return samples.size(); }
};

/// Throws data_error if the traces disagree on ModelConfig, and
/// std::invalid_argument if `traces` is empty.
ScorePool collect_scores(std::span<const AttentionTrace> traces, ScoreFn fn);
ScorePool pool_from_matrices(std::span<const ScoreMatrix> scores);

// Linear interpolation between closest order statistics; q in [0, 1].
double quantile(std::vector<double> samples, double q);

/// p-th percentile for less-than functions, (100 - p)-th for the AWFT family.
ThresholdPolicy quantile_threshold(const ScorePool& pool, double p);

/// Strict comparison per the function's direction; throws
/// std::invalid_argument when the score function differs from the policy's.
HeadMask build_mask(const ScoreMatrix& scores, const ThresholdPolicy& policy);

/// Mean percentage of flagged heads over `masks` (0 for an empty sequence).
double percent_zeroed(std::span<const HeadMask> masks);

}  // namespace ihead
