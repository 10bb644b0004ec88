#include "inactive_heads/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "inactive_heads/numeric.hpp"
#include "inactive_heads/scores.hpp"

namespace ihead {

ScorePool collect_scores(std::span<const AttentionTrace> traces, ScoreFn fn) {
  if (traces.empty()) throw std::invalid_argument("collect_scores: no traces");
  ScorePool pool;
  pool.fn = fn;
  const ModelConfig& config = traces.front().config();
  pool.samples.reserve(traces.size() * static_cast<std::size_t>(config.total_heads()));
  for (const auto& t : traces) {
    if (!(t.config() == config)) throw data_error("collect_scores: traces have different model configs");
    const ScoreMatrix s = score_all_heads(t, fn);
    for (int l = 0; l < s.n_layers(); ++l) {
      for (int h = 0; h < s.n_heads(); ++h) pool.samples.push_back(s.values(h, l));
    }
  }
  return pool;
}

ScorePool pool_from_matrices(std::span<const ScoreMatrix> scores) {
  if (scores.empty()) throw std::invalid_argument("pool_from_matrices: no score matrices");
  ScorePool pool;
  pool.fn = scores.front().fn;
  for (const auto& s : scores) {
    if (s.fn != pool.fn) throw std::invalid_argument("pool_from_matrices: mixed score functions");
    for (int l = 0; l < s.n_layers(); ++l) {
      for (int h = 0; h < s.n_heads(); ++h) pool.samples.push_back(s.values(h, l));
    }
  }
  return pool;
}

double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("quantile: empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0, 1]");
  std::sort(samples.begin(), samples.end());
  const double pos = q * static_cast<double>(samples.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, samples.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return samples[lo] + frac * (samples[hi] - samples[lo]);
}

ThresholdPolicy quantile_threshold(const ScorePool& pool, double p) {
  if (pool.samples.empty()) throw std::invalid_argument("quantile_threshold: empty pool");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("quantile_threshold: p must lie in [0, 100]");
  const double level = direction_of(pool.fn) == Direction::greater_than ? 100.0 - p : p;
  ThresholdPolicy policy;
  policy.fn = pool.fn;
  policy.tau = quantile(pool.samples, level / 100.0);
  policy.quantile_p = p;
  std::ostringstream src;
  src << "pool_size=" << pool.count();
  policy.source = src.str();
  return policy;
}

HeadMask build_mask(const ScoreMatrix& scores, const ThresholdPolicy& policy) {
  if (scores.fn != policy.fn) throw std::invalid_argument("build_mask: score function does not match policy");
  HeadMask mask;
  if (direction_of(policy.fn) == Direction::greater_than) {
    mask.flags = (scores.values.array() > policy.tau).matrix();
  } else {
    mask.flags = (scores.values.array() < policy.tau).matrix();
  }
  std::ostringstream prov;
  prov << to_string(policy.fn) << " tau=" << policy.tau;
  mask.provenance = prov.str();
  return mask;
}

double percent_zeroed(std::span<const HeadMask> masks) {
  if (masks.empty()) return 0.0;
  KahanSum total;
  for (const auto& m : masks) {
    if (m.size() == 0) continue;
    total += 100.0 * static_cast<double>(m.count()) / static_cast<double>(m.size());
  }
  return total.value() / static_cast<double>(masks.size());
}

}  // namespace ihead
