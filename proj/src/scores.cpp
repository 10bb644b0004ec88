#include "inactive_heads/scores.hpp"

#include <numeric>

namespace ihead {

LayerNormalized layer_normalize(std::span<const double> raw) {
  if (raw.empty()) throw std::invalid_argument("layer_normalize: layer has no heads");
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(raw.size());
  LayerNormalized out;
  out.values.resize(static_cast<Eigen::Index>(raw.size()));
  if (mean == 0.0) {
    out.values.setOnes();
    out.degenerate = true;
    return out;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out.values[static_cast<Eigen::Index>(i)] = raw[i] / mean;
  return out;
}

double lthon(const AttentionTrace& trace, int layer, int head) {
  const int last = trace.real_positions().back();
  return trace.head_output(layer, head).row(last).cast<double>().norm();
}

namespace {

template <typename A, typename V, typename Z>
NormalizedScore base_score(ScoreFn fn, const A& attn, const V& values, const Z& head_out) {
  switch (base_of(fn)) {
    case ScoreFn::AWFT: return {awft(attn), false};
    case ScoreFn::AEQD: return {aeqd(attn), false};
    case ScoreFn::FTVVN: return {ftvvn(values), false};
    case ScoreFn::AVVN: return {avvn(values), false};
    case ScoreFn::AHON: return {ahon(head_out), false};
    case ScoreFn::LTHON:
      if (fn == ScoreFn::LTHON_HN) return lthon_hn(head_out);
      return {lthon(head_out), false};
    default: break;
  }
  throw std::logic_error("unreachable score function");
}

NormalizedScore head_score(const AttentionTrace& trace, int layer, int head, ScoreFn fn) {
  if (trace.n_real() == trace.seq_len()) {
    return base_score(fn, trace.attn(layer, head), trace.values(layer, head), trace.head_output(layer, head));
  }
  const HeadSlice s = trace.slice(layer, head);
  return base_score(fn, s.attn, s.values, s.head_out);
}

}  // namespace

ScoreMatrix score_all_heads(const AttentionTrace& trace, ScoreFn fn) {
  const ModelConfig& c = trace.config();
  ScoreMatrix out;
  out.fn = fn;
  out.sequence_id = trace.sequence_id();
  out.values.resize(c.n_q_heads, c.n_layers);
  for (int l = 0; l < c.n_layers; ++l) {
    std::vector<double> raw(c.n_q_heads);
    for (int h = 0; h < c.n_q_heads; ++h) {
      const NormalizedScore s = head_score(trace, l, h, fn);
      raw[h] = s.value;
      if (s.degenerate) out.degenerate.push_back(l * c.n_q_heads + h);
    }
    if (is_layer_normalized(fn)) {
      const LayerNormalized ln = layer_normalize(raw);
      out.values.col(l) = ln.values;
      if (ln.degenerate) out.degenerate.push_back(l);
    } else {
      out.values.col(l) = Eigen::Map<const VectorXd>(raw.data(), c.n_q_heads);
    }
  }
  return out;
}

}  // namespace ihead
