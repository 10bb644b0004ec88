#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "inactive_heads/trace.hpp"

namespace ihead {

AttentionTrace::AttentionTrace(ModelConfig config, std::string sequence_id, std::vector<MatrixXf> attn,
                               std::vector<MatrixXf> values, std::vector<MatrixXf> head_out,
                               std::vector<bool> padding_mask)
    : config_(config),
      sequence_id_(std::move(sequence_id)),
      attn_(std::move(attn)),
      values_(std::move(values)),
      head_out_(std::move(head_out)),
      padding_mask_(std::move(padding_mask)) {
  validate();
}

std::size_t AttentionTrace::index(int layer, int head) const {
  if (layer < 0 || layer >= config_.n_layers || head < 0 || head >= config_.n_q_heads) {
    throw std::out_of_range("trace: head index out of range");
  }
  return static_cast<std::size_t>(layer) * config_.n_q_heads + head;
}

void AttentionTrace::validate() {
  try {
    config_.validate();
  } catch (const std::invalid_argument& e) {
    throw data_error(e.what());
  }
  const std::size_t n_heads = static_cast<std::size_t>(config_.total_heads());
  seq_len_ = static_cast<int>(padding_mask_.size());
  if (seq_len_ < 1) throw data_error("trace: seq_len must be at least 1");
  if (seq_len_ > config_.max_seq_len) throw data_error("trace: seq_len exceeds max_seq_len");
  real_positions_.clear();
  for (int i = 0; i < seq_len_; ++i) {
    if (padding_mask_[i]) real_positions_.push_back(i);
  }
  if (real_positions_.empty()) throw data_error("trace: no unpadded positions");
  if (attn_.size() != n_heads || values_.size() != n_heads) {
    throw data_error("trace: expected one attention and value matrix per (layer, query head)");
  }

  const int n = seq_len_;
  const int dv = config_.d_head;
  for (std::size_t k = 0; k < n_heads; ++k) {
    const MatrixXf& a = attn_[k];
    const MatrixXf& v = values_[k];
    if (a.rows() != n || a.cols() != n) throw data_error("trace: attention matrix shape mismatch");
    if (v.rows() != n || v.cols() != dv) throw data_error("trace: value matrix shape mismatch");
    if (!a.allFinite() || !v.allFinite()) throw data_error("trace: non-finite values");
    for (int i = 0; i < n; ++i) {
      double row_sum = 0.0;
      for (int j = 0; j < n; ++j) {
        const float w = a(i, j);
        if (w < 0.0f || w > 1.0f) throw data_error("trace: attention weight outside [0, 1]");
        const bool must_be_zero = !padding_mask_[i] || !padding_mask_[j] || j > i;
        if (must_be_zero && w != 0.0f) {
          throw data_error("trace: nonzero attention on a future or padded position");
        }
        row_sum += w;
      }
      if (padding_mask_[i] && std::abs(row_sum - 1.0) > kRowSumTolerance) {
        std::ostringstream msg;
        msg << "trace: attention row " << i << " of head " << k << " sums to " << row_sum;
        throw data_error(msg.str());
      }
      if (!padding_mask_[i] && !v.row(i).isZero(0.0)) {
        throw data_error("trace: padded position carries a nonzero value vector");
      }
    }
  }

  if (head_out_.empty()) {
    head_out_.reserve(n_heads);
    for (std::size_t k = 0; k < n_heads; ++k) {
      MatrixXd z = attn_[k].cast<double>() * values_[k].cast<double>();
      head_out_.push_back(z.cast<float>());
    }
    return;
  }
  if (head_out_.size() != n_heads) throw data_error("trace: expected one head output per head");
  for (std::size_t k = 0; k < n_heads; ++k) {
    const MatrixXf& z = head_out_[k];
    if (z.rows() != n || z.cols() != dv) throw data_error("trace: head output shape mismatch");
    if (!z.allFinite()) throw data_error("trace: non-finite head output");
    const MatrixXd av = attn_[k].cast<double>() * values_[k].cast<double>();
    const double err = (av - z.cast<double>()).cwiseAbs().maxCoeff();
    if (err > kHeadOutputTolerance) {
      std::ostringstream msg;
      msg << "trace: head output differs from A*V by " << err << " in head " << k;
      throw data_error(msg.str());
    }
  }
}

HeadSlice AttentionTrace::slice(int layer, int head) const {
  const std::size_t k = index(layer, head);
  const int n = n_real();
  HeadSlice s;
  s.attn.resize(n, n);
  s.values.resize(n, config_.d_head);
  s.head_out.resize(n, config_.d_head);
  for (int r = 0; r < n; ++r) {
    const int i = real_positions_[r];
    for (int c = 0; c < n; ++c) s.attn(r, c) = attn_[k](i, real_positions_[c]);
    s.values.row(r) = values_[k].row(i).cast<double>();
    s.head_out.row(r) = head_out_[k].row(i).cast<double>();
  }
  return s;
}

namespace {

bool same_bits(const MatrixXf& a, const MatrixXf& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.data()[i]) != std::bit_cast<std::uint32_t>(b.data()[i])) return false;
  }
  return true;
}

int parse_int(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw data_error("metadata: missing '" + key + "'");
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw data_error("metadata: '" + key + "' is not an integer");
  }
}

// Packs per-head matrices into a [L, H, rows, cols] tensor.
Tensor pack(const std::vector<MatrixXf>& mats, const ModelConfig& config, int rows, int cols) {
  Tensor t;
  t.shape = {config.n_layers, config.n_q_heads, rows, cols};
  t.data.reserve(mats.size() * static_cast<std::size_t>(rows) * cols);
  for (const auto& m : mats) t.data.insert(t.data.end(), m.data(), m.data() + m.size());
  return t;
}

std::vector<MatrixXf> unpack(const Tensor& t, const ModelConfig& config, int rows, int cols,
                             const std::string& name) {
  const std::vector<std::int64_t> expected = {config.n_layers, config.n_q_heads, rows, cols};
  if (t.shape != expected) throw data_error("trace: tensor '" + name + "' has the wrong shape");
  std::vector<MatrixXf> out;
  const std::size_t block = static_cast<std::size_t>(rows) * cols;
  for (int k = 0; k < config.total_heads(); ++k) {
    out.push_back(Eigen::Map<const MatrixXf>(t.data.data() + k * block, rows, cols));
  }
  return out;
}

}  // namespace

bool identical(const AttentionTrace& a, const AttentionTrace& b) {
  if (!(a.config() == b.config()) || a.sequence_id() != b.sequence_id() ||
      a.padding_mask() != b.padding_mask()) {
    return false;
  }
  for (int l = 0; l < a.config().n_layers; ++l) {
    for (int h = 0; h < a.config().n_q_heads; ++h) {
      if (!same_bits(a.attn(l, h), b.attn(l, h)) || !same_bits(a.values(l, h), b.values(l, h)) ||
          !same_bits(a.head_output(l, h), b.head_output(l, h))) {
        return false;
      }
    }
  }
  return true;
}

void put_config(std::map<std::string, std::string>& metadata, const ModelConfig& c) {
  metadata["n_layers"] = std::to_string(c.n_layers);
  metadata["n_q_heads"] = std::to_string(c.n_q_heads);
  metadata["n_kv_heads"] = std::to_string(c.n_kv_heads);
  metadata["d_model"] = std::to_string(c.d_model);
  metadata["d_head"] = std::to_string(c.d_head);
  metadata["vocab_size"] = std::to_string(c.vocab_size);
  metadata["max_seq_len"] = std::to_string(c.max_seq_len);
}

ModelConfig get_config(const std::map<std::string, std::string>& m) {
  ModelConfig c;
  c.n_layers = parse_int(m, "n_layers");
  c.n_q_heads = parse_int(m, "n_q_heads");
  c.n_kv_heads = parse_int(m, "n_kv_heads");
  c.d_model = parse_int(m, "d_model");
  c.d_head = parse_int(m, "d_head");
  c.vocab_size = parse_int(m, "vocab_size");
  c.max_seq_len = parse_int(m, "max_seq_len");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw data_error(e.what());
  }
  return c;
}

TensorContainer trace_to_container(const AttentionTrace& trace,
                                   const std::map<std::string, std::string>& extra_metadata) {
  const ModelConfig& config = trace.config();
  const int n = trace.seq_len();
  std::vector<MatrixXf> attn, values, head_out;
  for (int l = 0; l < config.n_layers; ++l) {
    for (int h = 0; h < config.n_q_heads; ++h) {
      attn.push_back(trace.attn(l, h));
      values.push_back(trace.values(l, h));
      head_out.push_back(trace.head_output(l, h));
    }
  }
  TensorContainer c;
  c.tensors["attn"] = pack(attn, config, n, n);
  c.tensors["values"] = pack(values, config, n, config.d_head);
  c.tensors["head_out"] = pack(head_out, config, n, config.d_head);
  if (trace.n_real() != n) {
    Tensor mask;
    mask.shape = {n};
    for (bool real : trace.padding_mask()) mask.data.push_back(real ? 1.0f : 0.0f);
    c.tensors["padding_mask"] = std::move(mask);
  }
  c.metadata = extra_metadata;
  put_config(c.metadata, config);
  c.metadata["sequence_id"] = trace.sequence_id();
  return c;
}

AttentionTrace trace_from_container(const TensorContainer& c) {
  const ModelConfig config = get_config(c.metadata);
  const Tensor& attn = c.at("attn");
  if (attn.shape.size() != 4) throw data_error("trace: 'attn' must be rank 4");
  const auto n64 = attn.shape[2];
  if (n64 < 1 || n64 > config.max_seq_len) throw data_error("trace: invalid sequence length");
  const int n = static_cast<int>(n64);

  std::vector<bool> mask(n, true);
  if (c.contains("padding_mask")) {
    const Tensor& m = c.at("padding_mask");
    if (m.shape != std::vector<std::int64_t>{n}) throw data_error("trace: 'padding_mask' has the wrong shape");
    for (int i = 0; i < n; ++i) {
      if (m.data[i] == 1.0f) {
        mask[i] = true;
      } else if (m.data[i] == 0.0f) {
        mask[i] = false;
      } else {
        throw data_error("trace: 'padding_mask' entries must be 0 or 1");
      }
    }
  }
  std::vector<MatrixXf> head_out;
  if (c.contains("head_out")) head_out = unpack(c.at("head_out"), config, n, config.d_head, "head_out");
  auto seq = c.metadata.count("sequence_id") ? c.metadata.at("sequence_id") : std::string{};
  return AttentionTrace(config, std::move(seq), unpack(attn, config, n, n, "attn"),
                        unpack(c.at("values"), config, n, config.d_head, "values"), std::move(head_out),
                        std::move(mask));
}

void write_trace(const AttentionTrace& trace, std::ostream& out,
                 const std::map<std::string, std::string>& extra_metadata) {
  write_container(trace_to_container(trace, extra_metadata), out);
}

AttentionTrace read_trace(std::istream& in) { return trace_from_container(read_container(in)); }

void save_trace(const AttentionTrace& trace, const std::string& path,
                const std::map<std::string, std::string>& extra_metadata) {
  save_container(trace_to_container(trace, extra_metadata), path);
}

AttentionTrace load_trace(const std::string& path) { return trace_from_container(load_container(path)); }

}  // namespace ihead
