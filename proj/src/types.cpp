#include "inactive_heads/types.hpp"

#include <array>
#include <utility>

namespace ihead {

void ModelConfig::validate() const {
  if (n_layers <= 0 || n_q_heads <= 0 || n_kv_heads <= 0 || d_model <= 0 || d_head <= 0 ||
      vocab_size <= 0 || max_seq_len <= 0) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (n_kv_heads > n_q_heads || n_q_heads % n_kv_heads != 0) {
    throw std::invalid_argument("model config: n_q_heads must be a positive multiple of n_kv_heads");
  }
  if (d_head * n_q_heads != d_model) {
    throw std::invalid_argument("model config: d_head * n_q_heads must equal d_model");
  }
}

ModelConfig make_config(int n_layers, int n_q_heads, int n_kv_heads, int d_model, int vocab_size,
                        int max_seq_len) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.n_q_heads = n_q_heads;
  c.n_kv_heads = n_kv_heads;
  c.d_model = d_model;
  c.d_head = n_q_heads > 0 ? d_model / n_q_heads : 0;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  c.validate();
  return c;
}

namespace {

constexpr std::array<std::pair<ScoreFn, std::string_view>, 13> kNames = {{
    {ScoreFn::AWFT, "AWFT"},
    {ScoreFn::AEQD, "AEQD"},
    {ScoreFn::FTVVN, "FTVVN"},
    {ScoreFn::AVVN, "AVVN"},
    {ScoreFn::LTHON, "LTHON"},
    {ScoreFn::AHON, "AHON"},
    {ScoreFn::AWFT_LN, "AWFT_LN"},
    {ScoreFn::AEQD_LN, "AEQD_LN"},
    {ScoreFn::FTVVN_LN, "FTVVN_LN"},
    {ScoreFn::AVVN_LN, "AVVN_LN"},
    {ScoreFn::LTHON_LN, "LTHON_LN"},
    {ScoreFn::AHON_LN, "AHON_LN"},
    {ScoreFn::LTHON_HN, "LTHON_HN"},
}};

}  // namespace

std::string_view to_string(ScoreFn fn) {
  for (const auto& [f, name] : kNames) {
    if (f == fn) return name;
  }
  return "?";
}

ScoreFn parse_score_fn(std::string_view id) {
  for (const auto& [f, name] : kNames) {
    if (name == id) return f;
  }
  throw std::invalid_argument("unknown score function id: " + std::string(id));
}

Direction direction_of(ScoreFn fn) {
  return (fn == ScoreFn::AWFT || fn == ScoreFn::AWFT_LN) ? Direction::greater_than
                                                          : Direction::less_than;
}

bool is_layer_normalized(ScoreFn fn) {
  switch (fn) {
    case ScoreFn::AWFT_LN:
    case ScoreFn::AEQD_LN:
    case ScoreFn::FTVVN_LN:
    case ScoreFn::AVVN_LN:
    case ScoreFn::LTHON_LN:
    case ScoreFn::AHON_LN:
      return true;
    default:
      return false;
  }
}

ScoreFn base_of(ScoreFn fn) {
  switch (fn) {
    case ScoreFn::AWFT_LN: return ScoreFn::AWFT;
    case ScoreFn::AEQD_LN: return ScoreFn::AEQD;
    case ScoreFn::FTVVN_LN: return ScoreFn::FTVVN;
    case ScoreFn::AVVN_LN: return ScoreFn::AVVN;
    case ScoreFn::LTHON_LN: return ScoreFn::LTHON;
    case ScoreFn::AHON_LN: return ScoreFn::AHON;
    case ScoreFn::LTHON_HN: return ScoreFn::LTHON;
    default: return fn;
  }
}

HeadMask HeadMask::none(const ModelConfig& config) {
  HeadMask m;
  m.flags = BoolMatrix::Constant(config.n_q_heads, config.n_layers, false);
  return m;
}

HeadMask HeadMask::all(const ModelConfig& config) {
  HeadMask m;
  m.flags = BoolMatrix::Constant(config.n_q_heads, config.n_layers, true);
  return m;
}

HeadMask HeadMask::from_heads(const ModelConfig& config, const std::vector<HeadIndex>& heads) {
  HeadMask m = none(config);
  for (const auto& h : heads) {
    if (h.layer < 0 || h.layer >= config.n_layers || h.head < 0 || h.head >= config.n_q_heads) {
      throw std::out_of_range("head index out of range");
    }
    m.flags(h.head, h.layer) = true;
  }
  return m;
}

std::vector<HeadIndex> HeadMask::heads() const {
  std::vector<HeadIndex> out;
  for (Eigen::Index l = 0; l < flags.cols(); ++l) {
    for (Eigen::Index h = 0; h < flags.rows(); ++h) {
      if (flags(h, l)) out.push_back({static_cast<int>(l), static_cast<int>(h)});
    }
  }
  return out;
}

}  // namespace ihead
