#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lexshort/attention.hpp"
#include "lexshort/shortcuts.hpp"
#include "lexshort/tensor.hpp"

namespace lexshort {

struct ModelConfig {
  std::size_t n_layers = 3;
  std::size_t d_model = 64;
  std::size_t head_count = 4;
  std::size_t d_ff = 256;
  std::size_t vocab_size = 0;
  double dropout_rate = 0.1;
  double label_smoothing = 0.0;
  ShortcutVariant variant = ShortcutVariant::None;
  ShortcutFlags shortcut_flags;
  bool tie_embeddings = true;
  // Reproduces the ungated residual configuration (known not to converge);
  // keep on unless deliberately studying that failure.
  bool gate_enabled = true;
  // Shortcut source includes positional encodings by default; switch off to
  // feed pre-positional embeddings instead.
  bool positional_shortcut_source = true;
  std::size_t max_len = 64;
  std::uint64_t seed = 1;

  static ModelConfig toy(std::size_t vocab);
  // transformer-BASE shape: 6 layers, d=512, 8 heads, d_ff=2048
  static ModelConfig base(std::size_t vocab);
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);
std::string config_hash(const ModelConfig& config);

// Rectangular PAD-padded token batch.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t len = 0;
  std::vector<int> ids;              // batch x len, row-major
  std::vector<std::size_t> lengths;  // true row lengths
  int pad_id = 0;

  static TokenBatch from_rows(const std::vector<std::vector<int>>& rows, int pad_id);
  int at(std::size_t row, std::size_t pos) const { return ids[row * len + pos]; }
  std::vector<std::vector<char>> keep_flags() const;
};

template <typename T>
struct GateActivationT {
  bool decoder = false;
  AttentionSite site = AttentionSite::SelfAttention;
  std::size_t layer = 0;  // 1-based
  TensorT<T> r_k, r_v;    // [b x t x d]
};

// One sub-network's forward record: states[0] is the embedding output H_0,
// states[l] is layer l's feed-forward sub-layer output.
template <typename T>
struct SubnetTraceT {
  std::vector<TensorT<T>> states;
  TensorT<T> table_embedding;  // lookup * sqrt(d), before positions
  AttentionMask mask;          // padding mask over this sub-network's positions
};

template <typename T>
struct LayerParamsT {
  AttentionParamsT<T> self_attn;
  GateParamsT<T> self_gate;
  AttentionParamsT<T> cross_attn;  // decoder layers only
  GateParamsT<T> cross_gate;
  TensorT<T> w_ff1, b_ff1, w_ff2, b_ff2;
  TensorT<T> ln1_g, ln1_b, ln2_g, ln2_b, ln3_g, ln3_b;
};

// Per-layer decoding state for incremental (stepwise) decoding. Gating is
// per position, so each step's fused keys/values are final once computed.
template <typename T>
struct DecodeCacheT {
  struct Layer {
    TensorT<T> self_k, self_v;    // per-head keys/values over the prefix
    TensorT<T> cross_k, cross_v;  // fixed once the source is seen
  };
  std::vector<Layer> layers;
  std::size_t len = 0;

  // Reorders the batch axis (beam search parent selection).
  DecodeCacheT gather(const std::vector<std::size_t>& rows) const;
};

template <typename T>
class ModelT {
 public:
  explicit ModelT(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Stable, variant-independent naming; shared structure gets shared names.
  std::vector<std::pair<std::string, TensorT<T>>> named_parameters() const;
  std::size_t parameter_count() const;

  TensorT<T> positional_encoding() const { return positions_; }

  // lookup * sqrt(d) + positions[offset..] (+ dropout when training)
  TensorT<T> embed(const TokenBatch& tokens, bool training, Rng& rng,
                   std::size_t offset = 0, TensorT<T>* pre_positional = nullptr) const;

  SubnetTraceT<T> encode(const TokenBatch& src, bool training, Rng& rng,
                         std::vector<GateActivationT<T>>* gates = nullptr) const;

  // Teacher-forced decoder pass over the whole prefix.
  TensorT<T> decode(const TokenBatch& tgt_in, const SubnetTraceT<T>& enc, bool training,
                    Rng& rng, SubnetTraceT<T>* trace = nullptr,
                    std::vector<GateActivationT<T>>* gates = nullptr) const;

  // One decoding step: appends `next_ids` (one token per batch row) to the
  // cache and returns next-token logits [b x vocab].
  TensorT<T> decode_step(DecodeCacheT<T>& cache, const SubnetTraceT<T>& enc,
                         const std::vector<int>& next_ids) const;

  TensorT<T> forward_loss(const TokenBatch& src, const TokenBatch& tgt_in,
                          const TokenBatch& tgt_out, bool training, Rng& rng,
                          std::vector<GateActivationT<T>>* gates = nullptr) const;

  TensorT<T> output_logits(const TensorT<T>& hidden) const;

  TensorT<T> embedding_table() const { return embedding_; }

 private:
  ModelConfig config_;
  TensorT<T> embedding_;  // vocab x d
  TensorT<T> w_out_;      // vocab x d, empty when tied
  TensorT<T> positions_;  // max_len x d
  std::vector<LayerParamsT<T>> encoder_;
  std::vector<LayerParamsT<T>> decoder_;

  TensorT<T> run_layer(const LayerParamsT<T>& layer, std::size_t layer_index,
                       bool is_decoder, const TensorT<T>& h_prev,
                       const std::vector<TensorT<T>>& history,
                       const SubnetTraceT<T>* enc, const TensorT<T>* self_bias,
                       const TensorT<T>* cross_bias, bool training, Rng& rng,
                       std::vector<GateActivationT<T>>* gates,
                       DecodeCacheT<T>* cache) const;
};

using Model = ModelT<float>;
using DecodeCache = DecodeCacheT<float>;

// Single-file checkpoint: JSON manifest line (config, step, seed, hash,
// parameter order) followed by one blob per parameter.
void save_checkpoint(const std::string& path, const ModelT<float>& model, std::size_t step);

struct CheckpointInfo {
  ModelConfig config;
  std::size_t step = 0;
  std::string hash;
};

ModelT<float> load_checkpoint(const std::string& path, CheckpointInfo* info = nullptr);

}  // namespace lexshort
