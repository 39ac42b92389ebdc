#include "lexshort/attention.hpp"

#include <cmath>
#include <type_traits>
#include <stdexcept>

namespace lexshort {

namespace {
constexpr double kMaskValue = -1e9;
constexpr double kMaskFloor = -1e8;  // rows with max below this are degenerate
}  // namespace

template <typename T>
TensorT<T> mask_bias(const AttentionMask& mask, std::size_t batch, std::size_t t_q,
                     std::size_t t_k) {
  const bool causal = mask.kind == MaskKind::Causal || mask.kind == MaskKind::Both;
  const bool padding = mask.kind == MaskKind::Padding || mask.kind == MaskKind::Both;
  if (padding && mask.key_keep.size() != batch) {
    throw std::invalid_argument("mask_bias: key_keep rows (" +
                                std::to_string(mask.key_keep.size()) +
                                ") do not match batch " + std::to_string(batch));
  }
  if (causal && t_q > t_k) {
    throw std::invalid_argument("mask_bias: causal mask needs t_q <= t_k");
  }
  const std::size_t offset = causal ? t_k - t_q : 0;
  TensorT<T> bias({batch, 1, t_q, t_k});
  auto bv = bias.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const std::vector<char>* keep = padding ? &mask.key_keep[b] : nullptr;
    if (keep && keep->size() != t_k) {
      throw std::invalid_argument("mask_bias: key_keep length mismatch for batch entry " +
                                  std::to_string(b));
    }
    for (std::size_t q = 0; q < t_q; ++q) {
      bool any_open = false;
      for (std::size_t k = 0; k < t_k; ++k) {
        bool allowed = true;
        if (causal && k > q + offset) allowed = false;
        if (keep && !(*keep)[k]) allowed = false;
        bv[((b * t_q) + q) * t_k + k] = allowed ? T(0) : T(kMaskValue);
        any_open = any_open || allowed;
      }
      if (!any_open) {
        throw std::invalid_argument("mask_bias: query " + std::to_string(q) +
                                    " in batch entry " + std::to_string(b) +
                                    " has every key masked");
      }
    }
  }
  return bias;
}

template <typename T>
std::tuple<TensorT<T>, TensorT<T>, TensorT<T>> project_qkv(
    const TensorT<T>& h_s, const TensorT<T>& h_t, const AttentionParamsT<T>& params) {
  const std::size_t d = params.d_model();
  if (h_s.rank() != 3 || h_t.rank() != 3 || h_s.shape().back() != d ||
      h_t.shape().back() != d) {
    throw std::invalid_argument("project_qkv: inputs must be [b x t x " + std::to_string(d) +
                                "], got " + shape_string(h_s.shape()) + " and " +
                                shape_string(h_t.shape()));
  }
  if (params.head_count == 0 || d % params.head_count != 0) {
    throw std::invalid_argument("project_qkv: feature extent not divisible by head count");
  }
  TensorT<T> q = split_heads(matmul(h_s, params.w_q, false, true), params.head_count);
  TensorT<T> k = split_heads(matmul(h_t, params.w_k, false, true), params.head_count);
  TensorT<T> v = split_heads(matmul(h_t, params.w_v, false, true), params.head_count);
  return {q, k, v};
}

template <typename T>
TensorT<T> scaled_dot_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                                std::type_identity_t<const TensorT<T>*> bias) {
  if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4) {
    throw std::invalid_argument("scaled_dot_attention: expected [b x h x t x d_k] inputs");
  }
  const std::size_t d_k = q.shape().back();
  if (k.shape().back() != d_k) {
    throw std::invalid_argument("scaled_dot_attention: query/key depth mismatch: " +
                                shape_string(q.shape()) + " vs " + shape_string(k.shape()));
  }
  if (k.extent(2) != v.extent(2)) {
    throw std::invalid_argument("scaled_dot_attention: key/value length mismatch: " +
                                shape_string(k.shape()) + " vs " + shape_string(v.shape()));
  }
  TensorT<T> scores = scale(matmul(q, k, false, true),
                            static_cast<T>(1.0 / std::sqrt(static_cast<double>(d_k))));
  if (bias) {
    scores = add(scores, *bias);
    // any query row with every key masked has no probability mass to give
    const std::size_t t_k = scores.shape().back();
    auto sv = scores.values();
    const std::size_t rows = scores.size() / t_k;
    for (std::size_t r = 0; r < rows; ++r) {
      T mx = sv[r * t_k];
      for (std::size_t j = 1; j < t_k; ++j) mx = std::max(mx, sv[r * t_k + j]);
      if (mx <= T(kMaskFloor)) {
        throw std::invalid_argument(
            "scaled_dot_attention: fully masked query row (degenerate softmax)");
      }
    }
  }
  return matmul(softmax(scores, -1), v);
}

template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& h_s, const TensorT<T>& h_t,
                                const AttentionParamsT<T>& params,
                                std::type_identity_t<const TensorT<T>*> bias,
                                std::type_identity_t<const KvOverrideT<T>*> kv_override) {
  TensorT<T> q, k, v;
  if (kv_override) {
    // caller supplies per-head keys/values; w_k/w_v stay untouched (layers that
    // always override may not allocate them at all)
    const std::size_t d = params.d_model();
    if (h_s.rank() != 3 || h_s.shape().back() != d) {
      throw std::invalid_argument("multi_head_attention: query input must be [b x t x " +
                                  std::to_string(d) + "], got " + shape_string(h_s.shape()));
    }
    if (params.head_count == 0 || d % params.head_count != 0) {
      throw std::invalid_argument(
          "multi_head_attention: feature extent not divisible by head count");
    }
    q = split_heads(matmul(h_s, params.w_q, false, true), params.head_count);
    k = kv_override->k;
    v = kv_override->v;
    const std::vector<std::size_t> want = {h_s.extent(0), params.head_count, k.rank() == 4 ? k.extent(2) : 0,
                                           d / params.head_count};
    if (k.rank() != 4 || v.rank() != 4 || k.shape() != want || v.shape() != want) {
      throw std::invalid_argument(
          "multi_head_attention: override shapes " + shape_string(kv_override->k.shape()) +
          "/" + shape_string(kv_override->v.shape()) + " are not per-head [b x h x t x d_k]");
    }
  } else {
    std::tie(q, k, v) = project_qkv(h_s, h_t, params);
  }
  TensorT<T> heads = scaled_dot_attention(q, k, v, bias);
  return matmul(merge_heads(heads), params.w_o, false, true);
}

#define LEXSHORT_INSTANTIATE_ATTN(T)                                                        \
  template TensorT<T> mask_bias<T>(const AttentionMask&, std::size_t, std::size_t,          \
                                   std::size_t);                                            \
  template std::tuple<TensorT<T>, TensorT<T>, TensorT<T>> project_qkv<T>(                   \
      const TensorT<T>&, const TensorT<T>&, const AttentionParamsT<T>&);                    \
  template TensorT<T> scaled_dot_attention<T>(const TensorT<T>&, const TensorT<T>&,         \
                                              const TensorT<T>&, const TensorT<T>*);        \
  template TensorT<T> multi_head_attention<T>(const TensorT<T>&, const TensorT<T>&,         \
                                              const AttentionParamsT<T>&,                   \
                                              const TensorT<T>*, const KvOverrideT<T>*);

LEXSHORT_INSTANTIATE_ATTN(float)
LEXSHORT_INSTANTIATE_ATTN(double)

#undef LEXSHORT_INSTANTIATE_ATTN

}  // namespace lexshort
