#pragma once

// Desk-scale decoder-only reference transformer.
//
// Pre-norm residual blocks with RMS normalization, learned absolute position
// embeddings, causal softmax attention with grouped KV heads, a GELU MLP
// (d_model -> 4 d_model -> d_model) and no biases anywhere. Row-vector
// convention throughout: activations are N x d_model and weights multiply on
// the right.
//
// All parameters are held in double but are exactly representable in float,
// so checkpoints written as F32 reload bit-identically.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "inactive_heads/tensor_container.hpp"
#include "inactive_heads/trace.hpp"
#include "inactive_heads/types.hpp"

namespace ihead {

struct LayerWeights {
  VectorXd attn_norm;  // d_model
  VectorXd mlp_norm;   // d_model
  MatrixXd w_q;        // d_model x d_model
  MatrixXd w_k;        // d_model x (n_kv_heads * d_head)
  MatrixXd w_v;        // d_model x (n_kv_heads * d_head)
  MatrixXd w_o;        // d_model x d_model, row block h belongs to query head h
  MatrixXd w_up;       // d_model x 4 d_model
  MatrixXd w_down;     // 4 d_model x d_model
};

struct TransformerWeights {
  ModelConfig config;
  std::uint64_t seed = 0;
  MatrixXd token_embedding;     // vocab_size x d_model
  MatrixXd position_embedding;  // max_seq_len x d_model
  std::vector<LayerWeights> layers;
  VectorXd final_norm;          // d_model
  MatrixXd unembedding;         // d_model x vocab_size
};

bool identical(const TransformerWeights& a, const TransformerWeights& b);

/// Seeded Gaussian init scaled by 1/sqrt(d_model); norm gains start at 1.
TransformerWeights init_model(const ModelConfig& config, std::uint64_t seed);

struct ForwardResult {
  MatrixXd logits;       // N x vocab_size
  AttentionTrace trace;  // natural (unzeroed) head outputs
  HeadMask zeroed;       // heads whose Z was replaced by zero in this pass
};

/// Runs the model on `tokens`. Heads flagged in `mask` have their output Z
/// replaced by zero before concatenation and the output projection; the
/// trace still records the unzeroed Z.
ForwardResult forward(const TransformerWeights& weights, std::span<const int> tokens,
                      const std::optional<HeadMask>& mask = std::nullopt,
                      const std::string& sequence_id = "");

/// Z_i · W_O^(i): the head's direct contribution to the attention block output.
MatrixXd circuit_head_contribution(const AttentionTrace& trace, const TransformerWeights& weights,
                                   int layer, int head);

enum class PlantKind { near_zero_output, first_token_sink };

struct PlantSpec {
  std::vector<HeadIndex> targets;
  PlantKind kind = PlantKind::near_zero_output;
  double scale = 1e-4;
};

std::string_view to_string(PlantKind kind);
PlantKind parse_plant_kind(std::string_view name);

// Minimum pre-softmax margin of the first key over every other key that
// first_token_sink plants are calibrated to on probe inputs.
inline constexpr double kSinkLogitMargin = 10.0;

/// Returns a copy of `weights` with the target heads rewired.
///
/// near_zero_output scales the head's value projection by `scale`, so its
/// output vanishes while its attention pattern stays natural.
///
/// first_token_sink reserves the last two residual channels as read-only
/// carriers (no block writes into them): a constant "bias" channel present at
/// every position and a "sink" channel present only at position 0. The target
/// head's query reads the bias channel and its key reads the sink channel, so
/// position 0 wins every query by at least kSinkLogitMargin on probe inputs.
/// The sink-channel magnitude is chosen so that the head's value vector at
/// position 0 shrinks by roughly `scale` (a value-state drain); scale = 1
/// leaves only a mild drain. Apply all sink targets in one call.
///
/// Throws std::invalid_argument for out-of-range or duplicate targets, or when
/// a target shares its KV head with a non-target query head.
TransformerWeights plant_heads(const TransformerWeights& weights, const PlantSpec& spec);

// Checkpoint I/O in the named-tensor container (tensor names prefixed "w.").
TensorContainer weights_to_container(const TransformerWeights& weights,
                                     const std::map<std::string, std::string>& extra_metadata = {});
TransformerWeights weights_from_container(const TensorContainer& container);
void save_weights(const TransformerWeights& weights, const std::string& path,
                  const std::map<std::string, std::string>& extra_metadata = {});
TransformerWeights load_weights(const std::string& path);

}  // namespace ihead
