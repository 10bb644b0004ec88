#pragma once

// Per-head inactivity scores.
//
// Base kernels take one head's unpadded slice: A (N x N, causal and
// row-stochastic), V (N x d_head) or Z = A·V (N x d_head). They accept any
// Eigen dense expression and accumulate in double.

#include <cmath>
#include <span>

#include "inactive_heads/trace.hpp"
#include "inactive_heads/types.hpp"

namespace ihead {

// Mean attention paid to key position 0.
template <typename Derived>
double awft(const Eigen::MatrixBase<Derived>& attn) {
  const Eigen::Index n = attn.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += static_cast<double>(attn(i, 0));
  return total / static_cast<double>(n);
}

// Mean natural-log entropy of each query's distribution over its causal
// support (keys 0..i), with 0 log 0 = 0.
template <typename Derived>
double aeqd(const Eigen::MatrixBase<Derived>& attn) {
  const Eigen::Index n = attn.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double ent = 0.0;
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double a = static_cast<double>(attn(i, j));
      if (a > 0.0) ent -= a * std::log(a);
    }
    total += ent;
  }
  return total / static_cast<double>(n);
}

template <typename Derived>
double mean_row_norm(const Eigen::MatrixBase<Derived>& m) {
  return m.template cast<double>().rowwise().norm().mean();
}

template <typename Derived>
double ftvvn(const Eigen::MatrixBase<Derived>& values) {
  return values.row(0).template cast<double>().norm();
}

template <typename Derived>
double avvn(const Eigen::MatrixBase<Derived>& values) {
  return mean_row_norm(values);
}

// Norm of the head output at the last (unpadded) position.
template <typename Derived>
double lthon(const Eigen::MatrixBase<Derived>& head_out) {
  return head_out.row(head_out.rows() - 1).template cast<double>().norm();
}

template <typename Derived>
double ahon(const Eigen::MatrixBase<Derived>& head_out) {
  return mean_row_norm(head_out);
}

struct NormalizedScore {
  double value = 1.0;
  bool degenerate = false;
};

// LTHON divided by the mean output norm over all positions of the same head.
// A zero denominator yields 1.0 with the degenerate flag set.
template <typename Derived>
NormalizedScore lthon_hn(const Eigen::MatrixBase<Derived>& head_out) {
  const double denom = mean_row_norm(head_out);
  if (denom == 0.0) return {1.0, true};
  return {lthon(head_out) / denom, false};
}

struct LayerNormalized {
  VectorXd values;
  bool degenerate = false;
};

/// Divides each head's score by the mean over all heads of the layer (the
/// head itself included). A zero mean yields all ones with the degenerate
/// flag set. Throws std::invalid_argument on an empty layer.
LayerNormalized layer_normalize(std::span<const double> raw);

// Unpadded-position variants operating on a trace.
double lthon(const AttentionTrace& trace, int layer, int head);

/// Scores every head of `trace`: heads x layers.
ScoreMatrix score_all_heads(const AttentionTrace& trace, ScoreFn fn);

}  // namespace ihead
