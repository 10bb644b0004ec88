#include "inactive_heads/analytics.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "inactive_heads/numeric.hpp"
#include "inactive_heads/scores.hpp"

namespace ihead {

namespace {

void check_shapes(const HeadMask& a, const HeadMask& b) {
  if (a.flags.rows() != b.flags.rows() || a.flags.cols() != b.flags.cols()) {
    throw std::invalid_argument("mask shapes differ");
  }
}

}  // namespace

double iou(const HeadMask& a, const HeadMask& b) {
  check_shapes(a, b);
  const auto inter = (a.flags.array() && b.flags.array()).count();
  const auto uni = (a.flags.array() || b.flags.array()).count();
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double precision(const HeadMask& pred, const HeadMask& truth) {
  check_shapes(pred, truth);
  const auto n_pred = pred.flags.count();
  if (n_pred == 0) return 1.0;
  const auto inter = (pred.flags.array() && truth.flags.array()).count();
  return static_cast<double>(inter) / static_cast<double>(n_pred);
}

std::pair<AgreementMatrix, AgreementMatrix> agreement_study(std::span<const AttentionTrace> traces,
                                                            std::span<const ScoreFn> fns, double target_fraction) {
  if (traces.empty()) throw std::invalid_argument("agreement_study: no traces");
  if (fns.empty()) throw std::invalid_argument("agreement_study: no score functions");
  const std::size_t k = fns.size();

  // masks[f][t]
  std::vector<std::vector<HeadMask>> masks(k);
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<ScoreMatrix> scores;
    for (const auto& t : traces) scores.push_back(score_all_heads(t, fns[f]));
    const ThresholdPolicy policy = quantile_threshold(pool_from_matrices(scores), target_fraction);
    for (const auto& s : scores) masks[f].push_back(build_mask(s, policy));
  }

  AgreementMatrix iou_m{AgreementKind::iou, {fns.begin(), fns.end()}, Eigen::MatrixXd::Zero(k, k), target_fraction};
  AgreementMatrix prec_m{AgreementKind::precision, {fns.begin(), fns.end()}, Eigen::MatrixXd::Zero(k, k),
                         target_fraction};
  const double n = static_cast<double>(traces.size());
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      KahanSum s_iou, s_prec;
      for (std::size_t t = 0; t < traces.size(); ++t) {
        s_iou += iou(masks[r][t], masks[c][t]);
        s_prec += precision(masks[r][t], masks[c][t]);
      }
      iou_m.values(r, c) = s_iou.value() / n;
      prec_m.values(r, c) = s_prec.value() / n;
    }
  }
  return {std::move(iou_m), std::move(prec_m)};
}

double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
  std::vector<double> sa(a.begin(), a.end());
  std::vector<double> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());

  if (sa.size() == sb.size()) {
    KahanSum s;
    for (std::size_t i = 0; i < sa.size(); ++i) s += std::abs(sa[i] - sb[i]);
    return s.value() / na;
  }

  // Sweep the merged support, integrating |F_a - F_b| between breakpoints.
  std::size_t ia = 0, ib = 0;
  double x = std::min(sa.front(), sb.front());
  KahanSum area;
  while (ia < sa.size() || ib < sb.size()) {
    const double next = (ib >= sb.size() || (ia < sa.size() && sa[ia] <= sb[ib])) ? sa[ia] : sb[ib];
    const double fa = static_cast<double>(ia) / na;
    const double fb = static_cast<double>(ib) / nb;
    area += std::abs(fa - fb) * (next - x);
    x = next;
    while (ia < sa.size() && sa[ia] == x) ++ia;
    while (ib < sb.size() && sb[ib] == x) ++ib;
  }
  return area.value();
}

DistanceMatrix distribution_study(std::span<const ScorePool> pools, std::span<const std::string> labels,
                                  std::string pooling_mode) {
  if (pools.size() != labels.size()) throw std::invalid_argument("distribution_study: label count mismatch");
  if (pools.empty()) throw std::invalid_argument("distribution_study: no pools");
  for (const auto& p : pools) {
    if (p.fn != pools.front().fn) throw std::invalid_argument("distribution_study: pools use different score functions");
  }
  const std::size_t k = pools.size();
  DistanceMatrix out;
  out.labels.assign(labels.begin(), labels.end());
  out.values = Eigen::MatrixXd::Zero(k, k);
  out.pooling_mode = std::move(pooling_mode);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const double d = wasserstein1(pools[i].samples, pools[j].samples);
      out.values(i, j) = d;
      out.values(j, i) = d;
    }
  }
  return out;
}

PcaSummary attention_pca(std::span<const AttentionTrace> traces, int n_components) {
  if (n_components < 1) throw std::invalid_argument("attention_pca: n_components must be positive");
  std::vector<MatrixXd> population;
  int n = -1;
  for (const auto& t : traces) {
    if (n < 0) n = t.n_real();
    if (t.n_real() != n) throw data_error("attention_pca: attention matrices have different lengths");
    for (int l = 0; l < t.config().n_layers; ++l) {
      for (int h = 0; h < t.config().n_q_heads; ++h) population.push_back(t.slice(l, h).attn);
    }
  }
  if (population.size() < 2) throw std::invalid_argument("attention_pca: need at least 2 attention matrices");

  const Eigen::Index rows = static_cast<Eigen::Index>(population.size());
  const Eigen::Index dim = static_cast<Eigen::Index>(n) * n;
  Eigen::MatrixXd data(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    data.row(r) = Eigen::Map<const Eigen::RowVectorXd>(population[r].data(), dim);
  }
  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;

  PcaSummary out;
  out.seq_len = n;
  out.n_components = static_cast<int>(std::min<Eigen::Index>(n_components, std::min(rows, dim)));
  const double total = data.squaredNorm();
  if (total == 0.0) {
    out.degenerate = true;
    out.explained_variance_ratio = VectorXd::Zero(out.n_components);
    out.components = MatrixXd::Zero(out.n_components, dim);
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  out.explained_variance_ratio.resize(out.n_components);
  out.components.resize(out.n_components, dim);
  for (int c = 0; c < out.n_components; ++c) {
    out.explained_variance_ratio[c] = sv[c] * sv[c] / total;
    out.components.row(c) = svd.matrixV().col(c).transpose();
  }
  return out;
}

TensorContainer pca_to_container(const PcaSummary& pca) {
  TensorContainer c;
  Tensor comps;
  comps.shape = {pca.n_components, pca.seq_len, pca.seq_len};
  for (Eigen::Index i = 0; i < pca.components.size(); ++i) comps.data.push_back(static_cast<float>(pca.components.data()[i]));
  c.tensors["pca.components"] = std::move(comps);
  Tensor ratio;
  ratio.shape = {pca.n_components};
  for (Eigen::Index i = 0; i < pca.explained_variance_ratio.size(); ++i) {
    ratio.data.push_back(static_cast<float>(pca.explained_variance_ratio[i]));
  }
  c.tensors["pca.explained_variance_ratio"] = std::move(ratio);
  c.metadata["n_components"] = std::to_string(pca.n_components);
  c.metadata["seq_len"] = std::to_string(pca.seq_len);
  c.metadata["degenerate"] = pca.degenerate ? "true" : "false";
  return c;
}

}  // namespace ihead
