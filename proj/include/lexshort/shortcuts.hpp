#pragma once

#include <cstddef>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "lexshort/tensor.hpp"

namespace lexshort {

enum class ShortcutVariant {
  None,
  Lexical,
  LexicalFusion,
  NonLexical,
  DecToEncLexical,
  SelfPlusDecToEnc,
};

// Sub-network toggles for the ablation runs.
struct ShortcutFlags {
  bool encoder = true;
  bool decoder = true;
};

ShortcutVariant parse_variant(const std::string& name);
std::string variant_name(ShortcutVariant variant);

enum class AttentionSite { SelfAttention, DecToEnc };

// Gate parameters for one shortcut-equipped attention site. Dedicated
// shortcut projections and the fused projection are mutually exclusive.
template <typename T>
struct GateParamsT {
  TensorT<T> w_k_sc, w_v_sc;        // d x d
  TensorT<T> w_k_fused, w_v_fused;  // 2d x 2d, feature-fusion only
  TensorT<T> b_k, b_v;              // d

  bool fused() const { return w_k_fused.size() > 0; }
};

using GateParams = GateParamsT<float>;

// K^SC = W^{K_SC} E, V^SC = W^{V_SC} E, both [b x t x d] (gating happens in
// the full feature space; the caller reshapes per head afterwards).
template <typename T>
std::pair<TensorT<T>, TensorT<T>> project_shortcut(const TensorT<T>& e,
                                                   const GateParamsT<T>& gate_params);

// r = sigmoid(x_sc + x_h + bias), elementwise.
template <typename T>
TensorT<T> gate(const TensorT<T>& x_sc, const TensorT<T>& x_h, const TensorT<T>& bias);

// r (.) x_sc + (1 - r) (.) x_h. Evaluated in widened precision and rounded
// once so the result never escapes [min(x_sc,x_h), max(x_sc,x_h)].
template <typename T>
TensorT<T> fuse(const TensorT<T>& r, const TensorT<T>& x_sc, const TensorT<T>& x_h);

// Feature fusion: project concat([e; h_prev]) with the fused weights and
// split each result into (shortcut half, hidden half).
// Returns (K^SC, K, V^SC, V), each [b x t x d].
template <typename T>
std::tuple<TensorT<T>, TensorT<T>, TensorT<T>, TensorT<T>> fusion_project(
    const TensorT<T>& e, const TensorT<T>& h_prev, const GateParamsT<T>& gate_params);

// Which array feeds the shortcut key/value path of `layer` (1-based) at
// `site`, given this sub-network's state history (history[0] is the
// embedding output E, history[l] is layer l's output). Returns null when
// the variant leaves that site unmodified.
//
// NonLexical connects layer l to H_{l-2}; layers 1 and 2 connect to the
// embedding output. DecToEnc sites draw from the source-side embeddings.
template <typename T>
const TensorT<T>* shortcut_source(ShortcutVariant variant, AttentionSite site,
                                  std::size_t layer, const std::vector<TensorT<T>>& history,
                                  std::type_identity_t<const TensorT<T>*> enc_embedding);

// True when `variant` attaches a gated shortcut to `site` in the given
// sub-network (is_decoder selects which enable flag applies).
bool site_has_shortcut(ShortcutVariant variant, AttentionSite site, bool is_decoder,
                       const ShortcutFlags& flags);

}  // namespace lexshort
