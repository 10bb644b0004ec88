#include "inactive_heads/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace ihead {

namespace {

constexpr double kNormEps = 1e-6;

MatrixXd gaussian(std::mt19937_64& rng, int rows, int cols, double scale) {
  std::normal_distribution<double> dist(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng) * scale;
  return m;
}

template <typename Derived>
void round_to_float(Eigen::PlainObjectBase<Derived>& m) {
  m = m.template cast<float>().template cast<double>();
}

void round_to_float(TransformerWeights& w) {
  round_to_float(w.token_embedding);
  round_to_float(w.position_embedding);
  for (auto& l : w.layers) {
    round_to_float(l.attn_norm);
    round_to_float(l.mlp_norm);
    round_to_float(l.w_q);
    round_to_float(l.w_k);
    round_to_float(l.w_v);
    round_to_float(l.w_o);
    round_to_float(l.w_up);
    round_to_float(l.w_down);
  }
  round_to_float(w.final_norm);
  round_to_float(w.unembedding);
}

MatrixXd rms_norm(const MatrixXd& x, const VectorXd& gain) {
  MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double rms = std::sqrt(x.row(i).squaredNorm() / static_cast<double>(x.cols()) + kNormEps);
    out.row(i) = x.row(i).cwiseProduct(gain.transpose()) / rms;
  }
  return out;
}

double gelu(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

struct Pass {
  MatrixXd logits;
  std::vector<MatrixXf> attn, values, head_out;
  std::vector<MatrixXd> attn_inputs;  // normalized input of each attention block
};

Pass run(const TransformerWeights& w, std::span<const int> tokens, const HeadMask* mask,
         bool capture_inputs) {
  const ModelConfig& c = w.config;
  const int n = static_cast<int>(tokens.size());
  const int dh = c.d_head;
  const int group = c.group_size();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  MatrixXd x(n, c.d_model);
  for (int i = 0; i < n; ++i) x.row(i) = w.token_embedding.row(tokens[i]) + w.position_embedding.row(i);

  Pass p;
  p.attn.reserve(c.total_heads());
  p.values.reserve(c.total_heads());
  p.head_out.reserve(c.total_heads());
  for (int l = 0; l < c.n_layers; ++l) {
    const LayerWeights& lw = w.layers[l];
    const MatrixXd xn = rms_norm(x, lw.attn_norm);
    if (capture_inputs) p.attn_inputs.push_back(xn);
    const MatrixXd q = xn * lw.w_q;
    const MatrixXd k = xn * lw.w_k;
    const MatrixXd v = xn * lw.w_v;

    MatrixXd concat = MatrixXd::Zero(n, c.d_model);
    for (int h = 0; h < c.n_q_heads; ++h) {
      const int g = h / group;
      MatrixXd a = MatrixXd::Zero(n, n);
      const MatrixXd logits = q.middleCols(h * dh, dh) * k.middleCols(g * dh, dh).transpose() * inv_sqrt_dh;
      for (int i = 0; i < n; ++i) {
        const double row_max = logits.row(i).head(i + 1).maxCoeff();
        double total = 0.0;
        for (int j = 0; j <= i; ++j) {
          a(i, j) = std::exp(logits(i, j) - row_max);
          total += a(i, j);
        }
        a.row(i).head(i + 1) /= total;
      }
      const MatrixXd vh = v.middleCols(g * dh, dh);
      MatrixXd z = a * vh;
      p.attn.push_back(a.cast<float>());
      p.values.push_back(vh.cast<float>());
      p.head_out.push_back(z.cast<float>());
      if (mask == nullptr || !mask->at(l, h)) concat.middleCols(h * dh, dh) = z;
    }
    x += concat * lw.w_o;

    const MatrixXd hidden = (rms_norm(x, lw.mlp_norm) * lw.w_up).unaryExpr([](double s) { return gelu(s); });
    x += hidden * lw.w_down;
  }
  p.logits = rms_norm(x, w.final_norm) * w.unembedding;
  return p;
}

void check_tokens(const ModelConfig& c, std::span<const int> tokens) {
  if (tokens.empty()) throw std::invalid_argument("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_seq_len) throw std::invalid_argument("forward: sequence exceeds max_seq_len");
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_size) throw std::invalid_argument("forward: token id out of range");
  }
}

bool same(const MatrixXd& a, const MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

bool same(const VectorXd& a, const VectorXd& b) { return a.size() == b.size() && (a.array() == b.array()).all(); }

}  // namespace

bool identical(const TransformerWeights& a, const TransformerWeights& b) {
  if (!(a.config == b.config) || a.seed != b.seed || a.layers.size() != b.layers.size()) return false;
  if (!same(a.token_embedding, b.token_embedding) || !same(a.position_embedding, b.position_embedding) ||
      !same(a.final_norm, b.final_norm) || !same(a.unembedding, b.unembedding)) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    const auto& x = a.layers[l];
    const auto& y = b.layers[l];
    if (!same(x.attn_norm, y.attn_norm) || !same(x.mlp_norm, y.mlp_norm) || !same(x.w_q, y.w_q) ||
        !same(x.w_k, y.w_k) || !same(x.w_v, y.w_v) || !same(x.w_o, y.w_o) || !same(x.w_up, y.w_up) ||
        !same(x.w_down, y.w_down)) {
      return false;
    }
  }
  return true;
}

TransformerWeights init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d_model;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  TransformerWeights w;
  w.config = config;
  w.seed = seed;
  w.token_embedding = gaussian(rng, config.vocab_size, d, scale);
  w.position_embedding = gaussian(rng, config.max_seq_len, d, scale);
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = VectorXd::Ones(d);
    lw.mlp_norm = VectorXd::Ones(d);
    lw.w_q = gaussian(rng, d, d, scale);
    lw.w_k = gaussian(rng, d, config.d_kv(), scale);
    lw.w_v = gaussian(rng, d, config.d_kv(), scale);
    lw.w_o = gaussian(rng, d, d, scale);
    lw.w_up = gaussian(rng, d, 4 * d, scale);
    lw.w_down = gaussian(rng, 4 * d, d, scale);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = VectorXd::Ones(d);
  w.unembedding = gaussian(rng, d, config.vocab_size, scale);
  round_to_float(w);
  return w;
}

ForwardResult forward(const TransformerWeights& weights, std::span<const int> tokens,
                      const std::optional<HeadMask>& mask, const std::string& sequence_id) {
  const ModelConfig& c = weights.config;
  check_tokens(c, tokens);
  if (mask && !mask->matches(c)) throw std::invalid_argument("forward: mask shape does not match config");

  Pass p = run(weights, tokens, mask ? &*mask : nullptr, false);
  HeadMask zeroed = mask ? *mask : HeadMask::none(c);
  AttentionTrace trace(c, sequence_id, std::move(p.attn), std::move(p.values), std::move(p.head_out),
                       std::vector<bool>(tokens.size(), true));
  return {std::move(p.logits), std::move(trace), std::move(zeroed)};
}

MatrixXd circuit_head_contribution(const AttentionTrace& trace, const TransformerWeights& weights, int layer,
                                   int head) {
  const ModelConfig& c = weights.config;
  if (!(trace.config() == c)) throw std::invalid_argument("circuit_head_contribution: config mismatch");
  if (layer < 0 || layer >= c.n_layers || head < 0 || head >= c.n_q_heads) {
    throw std::out_of_range("circuit_head_contribution: head index out of range");
  }
  const MatrixXd z = trace.head_output(layer, head).cast<double>();
  return z * weights.layers[layer].w_o.middleRows(head * c.d_head, c.d_head);
}

std::string_view to_string(PlantKind kind) {
  return kind == PlantKind::near_zero_output ? "near_zero_output" : "first_token_sink";
}

PlantKind parse_plant_kind(std::string_view name) {
  if (name == "near_zero_output") return PlantKind::near_zero_output;
  if (name == "first_token_sink") return PlantKind::first_token_sink;
  throw std::invalid_argument("unknown plant kind: " + std::string(name));
}

TransformerWeights plant_heads(const TransformerWeights& weights, const PlantSpec& spec) {
  const ModelConfig& c = weights.config;
  std::set<HeadIndex> targets;
  for (const auto& t : spec.targets) {
    if (t.layer < 0 || t.layer >= c.n_layers || t.head < 0 || t.head >= c.n_q_heads) {
      throw std::invalid_argument("plant_heads: target out of range");
    }
    if (!targets.insert(t).second) throw std::invalid_argument("plant_heads: duplicate target");
  }
  const int group = c.group_size();
  for (const auto& t : targets) {
    const int first = (t.head / group) * group;
    for (int h = first; h < first + group; ++h) {
      if (!targets.count({t.layer, h})) {
        throw std::invalid_argument("plant_heads: target shares its KV head with a non-target query head");
      }
    }
  }

  TransformerWeights out = weights;
  if (targets.empty()) return out;
  const int dh = c.d_head;

  if (spec.kind == PlantKind::near_zero_output) {
    if (!(spec.scale >= 0.0) || !std::isfinite(spec.scale)) throw std::invalid_argument("plant_heads: invalid scale");
    std::set<std::pair<int, int>> kv_blocks;
    for (const auto& t : targets) kv_blocks.insert({t.layer, t.head / group});
    for (const auto& [layer, g] : kv_blocks) out.layers[layer].w_v.middleCols(g * dh, dh) *= spec.scale;
    round_to_float(out);
    return out;
  }

  if (!(spec.scale > 0.0 && spec.scale <= 1.0)) {
    throw std::invalid_argument("plant_heads: first_token_sink scale must lie in (0, 1]");
  }
  if (c.d_model < 4) throw std::invalid_argument("plant_heads: first_token_sink needs d_model >= 4");
  const int bias_ch = c.d_model - 1;
  const int sink_ch = c.d_model - 2;
  constexpr double kBias = 1.0;

  // Reserved channels: fed only by the embeddings, never written by a block.
  out.token_embedding.col(bias_ch).setZero();
  out.token_embedding.col(sink_ch).setZero();
  out.position_embedding.col(bias_ch).setConstant(kBias);
  out.position_embedding.col(sink_ch).setZero();
  for (auto& lw : out.layers) {
    lw.w_o.col(bias_ch).setZero();
    lw.w_o.col(sink_ch).setZero();
    lw.w_down.col(bias_ch).setZero();
    lw.w_down.col(sink_ch).setZero();
  }

  // Position 0's sink magnitude: dividing the rest of its residual by the RMS
  // shrinks it by ~sqrt(r2 / (r2 + s^2)), which we set equal to `scale`.
  double r2 = 0.0;
  for (int t = 0; t < c.vocab_size; ++t) {
    r2 += (out.token_embedding.row(t) + out.position_embedding.row(0)).squaredNorm();
  }
  r2 /= c.vocab_size;
  const double sink = std::max(1.0, std::sqrt(r2) * std::sqrt(1.0 / (spec.scale * spec.scale) - 1.0));
  out.position_embedding(0, sink_ch) = sink;

  for (const auto& t : targets) {
    auto& lw = out.layers[t.layer];
    const int g = t.head / group;
    lw.w_q.middleCols(t.head * dh, dh).setZero();
    lw.w_k.middleCols(g * dh, dh).setZero();
    lw.w_v.block(bias_ch, g * dh, 1, dh).setZero();
    lw.w_v.block(sink_ch, g * dh, 1, dh).setZero();
  }
  round_to_float(out);

  // Calibrate the query/key gain layer by layer on seeded probe inputs, so
  // that position 0 beats every other key by at least kSinkLogitMargin.
  std::mt19937_64 rng(weights.seed ^ 0x5eedf00dULL);
  std::uniform_int_distribution<int> tok(0, c.vocab_size - 1);
  const int probe_len = std::min(64, c.max_seq_len);
  std::vector<std::vector<int>> probes(4, std::vector<int>(probe_len));
  for (auto& p : probes) {
    for (auto& t : p) t = tok(rng);
  }
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int layer = 0; layer < c.n_layers; ++layer) {
    double min_product = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& t : targets) any = any || t.layer == layer;
    if (!any) continue;
    for (const auto& p : probes) {
      const Pass pass = run(out, p, nullptr, true);
      const MatrixXd& xn = pass.attn_inputs[layer];
      for (int i = 1; i < probe_len; ++i) min_product = std::min(min_product, xn(i, bias_ch) * xn(0, sink_ch));
    }
    if (!(min_product > 0.0)) throw std::runtime_error("plant_heads: sink channel calibration failed");
    const double gain = std::sqrt(kSinkLogitMargin / (min_product * inv_sqrt_dh));
    for (const auto& t : targets) {
      if (t.layer != layer) continue;
      auto& lw = out.layers[layer];
      lw.w_q(bias_ch, t.head * dh) = gain;
      lw.w_k(sink_ch, (t.head / group) * dh) = gain;
    }
    round_to_float(out);
  }
  return out;
}

namespace {

Tensor to_tensor(const MatrixXd& m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.data.resize(m.size());
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[i] = static_cast<float>(m.data()[i]);
  return t;
}

Tensor to_tensor(const VectorXd& v) {
  Tensor t;
  t.shape = {v.size()};
  t.data.resize(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i]);
  return t;
}

MatrixXd matrix_from(const TensorContainer& c, const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  const Tensor& t = c.at(name);
  if (t.shape != std::vector<std::int64_t>{rows, cols}) throw data_error("checkpoint: '" + name + "' has the wrong shape");
  return Eigen::Map<const MatrixXf>(t.data.data(), rows, cols).cast<double>();
}

VectorXd vector_from(const TensorContainer& c, const std::string& name, Eigen::Index n) {
  const Tensor& t = c.at(name);
  if (t.shape != std::vector<std::int64_t>{n}) throw data_error("checkpoint: '" + name + "' has the wrong shape");
  return Eigen::Map<const Eigen::VectorXf>(t.data.data(), n).cast<double>();
}

std::string layer_name(int l, const char* field) { return "w.layers." + std::to_string(l) + "." + field; }

}  // namespace

TensorContainer weights_to_container(const TransformerWeights& w,
                                     const std::map<std::string, std::string>& extra_metadata) {
  TensorContainer c;
  c.tensors["w.token_embedding"] = to_tensor(w.token_embedding);
  c.tensors["w.position_embedding"] = to_tensor(w.position_embedding);
  for (int l = 0; l < static_cast<int>(w.layers.size()); ++l) {
    const auto& lw = w.layers[l];
    c.tensors[layer_name(l, "attn_norm")] = to_tensor(lw.attn_norm);
    c.tensors[layer_name(l, "mlp_norm")] = to_tensor(lw.mlp_norm);
    c.tensors[layer_name(l, "w_q")] = to_tensor(lw.w_q);
    c.tensors[layer_name(l, "w_k")] = to_tensor(lw.w_k);
    c.tensors[layer_name(l, "w_v")] = to_tensor(lw.w_v);
    c.tensors[layer_name(l, "w_o")] = to_tensor(lw.w_o);
    c.tensors[layer_name(l, "w_up")] = to_tensor(lw.w_up);
    c.tensors[layer_name(l, "w_down")] = to_tensor(lw.w_down);
  }
  c.tensors["w.final_norm"] = to_tensor(w.final_norm);
  c.tensors["w.unembedding"] = to_tensor(w.unembedding);
  c.metadata = extra_metadata;
  put_config(c.metadata, w.config);
  c.metadata["seed"] = std::to_string(w.seed);
  return c;
}

TransformerWeights weights_from_container(const TensorContainer& c) {
  TransformerWeights w;
  w.config = get_config(c.metadata);
  try {
    w.seed = std::stoull(c.meta("seed"));
  } catch (const std::logic_error&) {
    throw data_error("checkpoint: invalid seed metadata");
  }
  const ModelConfig& cfg = w.config;
  const int d = cfg.d_model;
  w.token_embedding = matrix_from(c, "w.token_embedding", cfg.vocab_size, d);
  w.position_embedding = matrix_from(c, "w.position_embedding", cfg.max_seq_len, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWeights lw;
    lw.attn_norm = vector_from(c, layer_name(l, "attn_norm"), d);
    lw.mlp_norm = vector_from(c, layer_name(l, "mlp_norm"), d);
    lw.w_q = matrix_from(c, layer_name(l, "w_q"), d, d);
    lw.w_k = matrix_from(c, layer_name(l, "w_k"), d, cfg.d_kv());
    lw.w_v = matrix_from(c, layer_name(l, "w_v"), d, cfg.d_kv());
    lw.w_o = matrix_from(c, layer_name(l, "w_o"), d, d);
    lw.w_up = matrix_from(c, layer_name(l, "w_up"), d, 4 * d);
    lw.w_down = matrix_from(c, layer_name(l, "w_down"), 4 * d, d);
    w.layers.push_back(std::move(lw));
  }
  w.final_norm = vector_from(c, "w.final_norm", d);
  w.unembedding = matrix_from(c, "w.unembedding", d, cfg.vocab_size);
  return w;
}

void save_weights(const TransformerWeights& weights, const std::string& path,
                  const std::map<std::string, std::string>& extra_metadata) {
  save_container(weights_to_container(weights, extra_metadata), path);
}

TransformerWeights load_weights(const std::string& path) { return weights_from_container(load_container(path)); }

}  // namespace ihead
