#pragma once

#include <cstddef>
#include <optional>
#include <tuple>
#include <vector>

#include "lexshort/tensor.hpp"

namespace lexshort {

// Q/K/V projections are fused d_model x d_model matrices, stored [out x in]
// and sliced per head after projection. No projection biases.
template <typename T>
struct AttentionParamsT {
  TensorT<T> w_q, w_k, w_v, w_o;
  std::size_t head_count = 1;

  std::size_t d_model() const { return w_q.extent(0); }
  std::size_t d_k() const { return d_model() / head_count; }
};

using AttentionParams = AttentionParamsT<float>;

enum class MaskKind { None, Padding, Causal, Both };

// Boolean keep flags per batch key position; empty key_keep means all kept.
struct AttentionMask {
  MaskKind kind = MaskKind::None;
  std::vector<std::vector<char>> key_keep;
};

// Additive bias [b x 1 x t_q x t_k]: 0 where attention is allowed, -1e9
// where it is not. Causal masking treats the queries as the last t_q
// positions of the key sequence (full pass: t_q == t_k; incremental
// decode: t_q == 1).
template <typename T>
TensorT<T> mask_bias(const AttentionMask& mask, std::size_t batch, std::size_t t_q,
                     std::size_t t_k);

// h_s -> Q, h_t -> K and V, each reshaped to [b x heads x t x d_k].
template <typename T>
std::tuple<TensorT<T>, TensorT<T>, TensorT<T>> project_qkv(const TensorT<T>& h_s,
                                                           const TensorT<T>& h_t,
                                                           const AttentionParamsT<T>& params);

// softmax(Q K^T / sqrt(d_k) + bias) V over [b x h x t x d_k] inputs.
// bias may be null; a fully masked query row is an error.
template <typename T>
TensorT<T> scaled_dot_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                std::type_identity_t<const TensorT<T>*> bias = nullptr);

// Replacement per-head key/value arrays for shortcut-fused attention.
template <typename T>
struct KvOverrideT {
  TensorT<T> k, v;
};

using KvOverride = KvOverrideT<float>;

template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& h_s, const TensorT<T>& h_t,
                                const AttentionParamsT<T>& params,
                                std::type_identity_t<const TensorT<T>*> bias = nullptr,
                                std::type_identity_t<const KvOverrideT<T>*> kv_override =
                                    nullptr);

}  // namespace lexshort
