#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace ihead {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixXf = MatrixX<float>;
using MatrixXd = MatrixX<double>;
using Eigen::VectorXd;

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Malformed or inconsistent data: bad containers, broken trace invariants,
// mismatched shapes between inputs.
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int n_layers = 0;
  int n_q_heads = 0;
  int n_kv_heads = 0;
  int d_model = 0;
  int d_head = 0;
  int vocab_size = 0;
  int max_seq_len = 0;

  // Throws std::invalid_argument when the head/width arithmetic is inconsistent.
  void validate() const;

  int total_heads() const { return n_layers * n_q_heads; }
  int group_size() const { return n_q_heads / n_kv_heads; }
  int d_kv() const { return n_kv_heads * d_head; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Builds a config with d_head derived from d_model / n_q_heads.
ModelConfig make_config(int n_layers, int n_q_heads, int n_kv_heads, int d_model, int vocab_size,
                        int max_seq_len);

struct HeadIndex {
  int layer = 0;
  int head = 0;
  friend auto operator<=>(const HeadIndex&, const HeadIndex&) = default;
};

/// The 13 score functions. Ids are stable strings (see to_string).
enum class ScoreFn {
  AWFT,
  AEQD,
  FTVVN,
  AVVN,
  LTHON,
  AHON,
  AWFT_LN,
  AEQD_LN,
  FTVVN_LN,
  AVVN_LN,
  LTHON_LN,
  AHON_LN,
  LTHON_HN,
};

enum class Direction { greater_than, less_than };

inline constexpr ScoreFn kAllScoreFns[] = {
    ScoreFn::AWFT,    ScoreFn::AEQD,     ScoreFn::FTVVN,   ScoreFn::AVVN,     ScoreFn::LTHON,
    ScoreFn::AHON,    ScoreFn::AWFT_LN,  ScoreFn::AEQD_LN, ScoreFn::FTVVN_LN, ScoreFn::AVVN_LN,
    ScoreFn::LTHON_LN, ScoreFn::AHON_LN, ScoreFn::LTHON_HN,
};

std::string_view to_string(ScoreFn fn);
ScoreFn parse_score_fn(std::string_view id);  // throws std::invalid_argument
Direction direction_of(ScoreFn fn);
bool is_layer_normalized(ScoreFn fn);
// The unnormalized score an LN/HN variant is derived from.
ScoreFn base_of(ScoreFn fn);

// Scores for one sequence, laid out heads x layers.
struct ScoreMatrix {
  ScoreFn fn = ScoreFn::AWFT;
  Eigen::MatrixXd values;
  std::string sequence_id;
  // Layers whose normalization denominator was zero (LN), or head indices
  // packed as layer * n_q_heads + head whose HN denominator was zero.
  std::vector<int> degenerate;

  int n_heads() const { return static_cast<int>(values.rows()); }
  int n_layers() const { return static_cast<int>(values.cols()); }
};

struct HeadMask {
  BoolMatrix flags;  // heads x layers
  std::string provenance = "explicit";

  static HeadMask none(const ModelConfig& config);
  static HeadMask all(const ModelConfig& config);
  static HeadMask from_heads(const ModelConfig& config, const std::vector<HeadIndex>& heads);

  bool at(int layer, int head) const { return flags(head, layer); }
  int count() const { return static_cast<int>(flags.count()); }
  int size() const { return static_cast<int>(flags.size()); }
  bool matches(const ModelConfig& config) const {
    return flags.rows() == config.n_q_heads && flags.cols() == config.n_layers;
  }
  std::vector<HeadIndex> heads() const;
};

}  // namespace ihead
