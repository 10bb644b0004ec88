#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "inactive_heads/tensor_container.hpp"
#include "inactive_heads/types.hpp"

namespace ihead {

// Tolerances applied when a trace is constructed or loaded.
inline constexpr double kRowSumTolerance = 1e-5;
inline constexpr double kHeadOutputTolerance = 1e-4;

/// Unpadded view of one head: A (n x n), V (n x d_head), Z (n x d_head),
/// with n counting real tokens only.
struct HeadSlice {
  MatrixXd attn;
  MatrixXd values;
  MatrixXd head_out;
};

/// Per-(layer, query head) attention weights, value states and head outputs
/// of one sequence. Immutable after construction; the constructor enforces
/// causality, row-stochasticity over real tokens, zeroed padding and the
/// A·V ≈ Z consistency check, throwing data_error on any violation.
class AttentionTrace {
 public:
  // An empty head_out vector means "compute Z = A·V".
  AttentionTrace(ModelConfig config, std::string sequence_id, std::vector<MatrixXf> attn,
                 std::vector<MatrixXf> values, std::vector<MatrixXf> head_out,
                 std::vector<bool> padding_mask);

  const ModelConfig& config() const { return config_; }
  const std::string& sequence_id() const { return sequence_id_; }
  int seq_len() const { return seq_len_; }
  int n_real() const { return static_cast<int>(real_positions_.size()); }
  const std::vector<bool>& padding_mask() const { return padding_mask_; }
  const std::vector<int>& real_positions() const { return real_positions_; }

  const MatrixXf& attn(int layer, int head) const { return attn_[index(layer, head)]; }
  const MatrixXf& values(int layer, int head) const { return values_[index(layer, head)]; }
  const MatrixXf& head_output(int layer, int head) const { return head_out_[index(layer, head)]; }

  HeadSlice slice(int layer, int head) const;

 private:
  std::size_t index(int layer, int head) const;
  void validate();

  ModelConfig config_;
  std::string sequence_id_;
  int seq_len_ = 0;
  std::vector<MatrixXf> attn_;
  std::vector<MatrixXf> values_;
  std::vector<MatrixXf> head_out_;
  std::vector<bool> padding_mask_;
  std::vector<int> real_positions_;
};

// Bitwise equality of config, id, mask and every stored float.
bool identical(const AttentionTrace& a, const AttentionTrace& b);

/// Replicates each KV head's value matrix across its group of query heads.
template <typename Matrix>
std::vector<Matrix> expand_kv_heads(const std::vector<Matrix>& values, const ModelConfig& config) {
  if (config.n_kv_heads <= 0 || config.n_q_heads % config.n_kv_heads != 0) {
    throw std::invalid_argument("expand_kv_heads: n_q_heads must be a multiple of n_kv_heads");
  }
  if (static_cast<int>(values.size()) != config.n_kv_heads) {
    throw std::invalid_argument("expand_kv_heads: expected one matrix per KV head");
  }
  const int group = config.n_q_heads / config.n_kv_heads;
  std::vector<Matrix> out;
  out.reserve(config.n_q_heads);
  for (int q = 0; q < config.n_q_heads; ++q) out.push_back(values[q / group]);
  return out;
}

// Container I/O. Extra metadata entries are stored next to the config fields.
TensorContainer trace_to_container(const AttentionTrace& trace,
                                   const std::map<std::string, std::string>& extra_metadata = {});
AttentionTrace trace_from_container(const TensorContainer& container);

void write_trace(const AttentionTrace& trace, std::ostream& out,
                 const std::map<std::string, std::string>& extra_metadata = {});
AttentionTrace read_trace(std::istream& in);

void save_trace(const AttentionTrace& trace, const std::string& path,
                const std::map<std::string, std::string>& extra_metadata = {});
AttentionTrace load_trace(const std::string& path);

// ModelConfig <-> string metadata.
void put_config(std::map<std::string, std::string>& metadata, const ModelConfig& config);
ModelConfig get_config(const std::map<std::string, std::string>& metadata);

}  // namespace ihead
