#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "inactive_heads/calibration.hpp"
#include "inactive_heads/trace.hpp"
#include "inactive_heads/types.hpp"

namespace ihead {

/// |A ∩ B| / |A ∪ B|, 1 when both are empty. Throws std::invalid_argument on
/// shape mismatch.
double iou(const HeadMask& a, const HeadMask& b);

/// |pred ∩ truth| / |pred|, 1 when pred is empty.
double precision(const HeadMask& pred, const HeadMask& truth);

enum class AgreementKind { iou, precision };

struct AgreementMatrix {
  AgreementKind kind = AgreementKind::iou;
  std::vector<ScoreFn> fns;
  Eigen::MatrixXd values;  // precision: row = prediction, column = ground truth
  double target_fraction = 10.0;
};

/// Thresholds every function at the quantile that flags ~target_fraction % of
/// the pooled heads, then averages pairwise IoU and precision over traces.
std::pair<AgreementMatrix, AgreementMatrix> agreement_study(std::span<const AttentionTrace> traces,
                                                            std::span<const ScoreFn> fns, double target_fraction);

/// 1-D Wasserstein-1 distance between two empirical distributions, i.e. the
/// area between their CDFs. Equal-size samples reduce to the mean absolute
/// difference of sorted samples. Throws std::invalid_argument on empty input.
double wasserstein1(std::span<const double> a, std::span<const double> b);

struct DistanceMatrix {
  std::vector<std::string> labels;
  Eigen::MatrixXd values;  // symmetric, zero diagonal
  std::string pooling_mode;
};

/// Pairwise W1 between per-model pools of the same score function.
DistanceMatrix distribution_study(std::span<const ScorePool> pools, std::span<const std::string> labels,
                                  std::string pooling_mode = "per-sequence head scores");

struct PcaSummary {
  int n_components = 0;
  int seq_len = 0;                         // matrices are seq_len x seq_len
  VectorXd explained_variance_ratio;       // non-increasing, sums to <= 1
  MatrixXd components;                     // n_components x seq_len^2
  bool degenerate = false;                 // zero total variance
};

/// PCA over the population of per-head attention matrices (unpadded part,
/// flattened row-major), centered across the population. Throws data_error
/// on mixed lengths and std::invalid_argument with fewer than 2 matrices.
PcaSummary attention_pca(std::span<const AttentionTrace> traces, int n_components);

TensorContainer pca_to_container(const PcaSummary& pca);

}  // namespace ihead
