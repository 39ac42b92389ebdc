#include "lexshort/shortcuts.hpp"

#include <stdexcept>

namespace lexshort {

ShortcutVariant parse_variant(const std::string& name) {
  if (name == "none") return ShortcutVariant::None;
  if (name == "lexical") return ShortcutVariant::Lexical;
  if (name == "fusion") return ShortcutVariant::LexicalFusion;
  if (name == "nonlexical") return ShortcutVariant::NonLexical;
  if (name == "dec2enc") return ShortcutVariant::DecToEncLexical;
  if (name == "dec2enc+self") return ShortcutVariant::SelfPlusDecToEnc;
  throw std::invalid_argument(
      "unknown variant '" + name +
      "' (expected none|lexical|fusion|nonlexical|dec2enc|dec2enc+self)");
}

std::string variant_name(ShortcutVariant variant) {
  switch (variant) {
    case ShortcutVariant::None: return "none";
    case ShortcutVariant::Lexical: return "lexical";
    case ShortcutVariant::LexicalFusion: return "fusion";
    case ShortcutVariant::NonLexical: return "nonlexical";
    case ShortcutVariant::DecToEncLexical: return "dec2enc";
    case ShortcutVariant::SelfPlusDecToEnc: return "dec2enc+self";
  }
  throw std::invalid_argument("unknown variant value");
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> project_shortcut(const TensorT<T>& e,
                                                   const GateParamsT<T>& gate_params) {
  if (gate_params.w_k_sc.size() == 0 || gate_params.w_v_sc.size() == 0) {
    throw std::invalid_argument(
        "project_shortcut: layer carries no dedicated shortcut projections");
  }
  TensorT<T> k_sc = matmul(e, gate_params.w_k_sc, false, true);
  TensorT<T> v_sc = matmul(e, gate_params.w_v_sc, false, true);
  return {k_sc, v_sc};
}

template <typename T>
TensorT<T> gate(const TensorT<T>& x_sc, const TensorT<T>& x_h, const TensorT<T>& bias) {
  if (x_sc.shape() != x_h.shape()) {
    throw std::invalid_argument("gate: operand shapes differ: " +
                                shape_string(x_sc.shape()) + " vs " +
                                shape_string(x_h.shape()));
  }
  return sigmoid(add(add(x_sc, x_h), bias));
}

template <typename T>
TensorT<T> fuse(const TensorT<T>& r, const TensorT<T>& x_sc, const TensorT<T>& x_h) {
  if (r.shape() != x_sc.shape() || x_sc.shape() != x_h.shape()) {
    throw std::invalid_argument("fuse: operand shapes differ");
  }
  using Wide = std::conditional_t<std::is_same_v<T, float>, double, long double>;
  TensorT<T> out(r.shape());
  auto rv = r.values();
  auto sv = x_sc.values();
  auto hv = x_h.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    const Wide w = static_cast<Wide>(rv[i]);
    ov[i] = static_cast<T>(w * static_cast<Wide>(sv[i]) +
                           (Wide(1) - w) * static_cast<Wide>(hv[i]));
  }
  if (TapeT<T>::current() &&
      (r.requires_grad() || x_sc.requires_grad() || x_h.requires_grad())) {
    out.set_requires_grad(true);
    TensorT<T> rc = r, sc = x_sc, hc = x_h, oc = out;
    TapeT<T>::current()->record("fuse", [rc, sc, hc, oc]() mutable {
      auto g = oc.grad();
      auto rv2 = rc.values();
      auto sv2 = sc.values();
      auto hv2 = hc.values();
      const bool need_r = rc.requires_grad();
      const bool need_s = sc.requires_grad();
      const bool need_h = hc.requires_grad();
      std::span<T> gr = need_r ? rc.grad() : std::span<T>{};
      std::span<T> gs = need_s ? sc.grad() : std::span<T>{};
      std::span<T> gh = need_h ? hc.grad() : std::span<T>{};
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (need_r) gr[i] += g[i] * (sv2[i] - hv2[i]);
        if (need_s) gs[i] += g[i] * rv2[i];
        if (need_h) gh[i] += g[i] * (T(1) - rv2[i]);
      }
    });
  }
  return out;
}

template <typename T>
std::tuple<TensorT<T>, TensorT<T>, TensorT<T>, TensorT<T>> fusion_project(
    const TensorT<T>& e, const TensorT<T>& h_prev, const GateParamsT<T>& gate_params) {
  if (!gate_params.fused()) {
    throw std::invalid_argument("fusion_project: layer carries no fused projections");
  }
  if (e.shape() != h_prev.shape()) {
    throw std::invalid_argument("fusion_project: embedding/hidden shapes differ: " +
                                shape_string(e.shape()) + " vs " +
                                shape_string(h_prev.shape()));
  }
  TensorT<T> joint = concat<T>({e, h_prev}, -1);
  TensorT<T> k_joint = matmul(joint, gate_params.w_k_fused, false, true);
  TensorT<T> v_joint = matmul(joint, gate_params.w_v_fused, false, true);
  const std::size_t width = k_joint.shape().back();
  if (width % 2 != 0) {
    throw std::invalid_argument("fusion_project: odd split width " + std::to_string(width));
  }
  const std::size_t d = width / 2;
  auto k_halves = split(k_joint, {d, d}, -1);
  auto v_halves = split(v_joint, {d, d}, -1);
  return {k_halves[0], k_halves[1], v_halves[0], v_halves[1]};
}

template <typename T>
const TensorT<T>* shortcut_source(ShortcutVariant variant, AttentionSite site,
                                  std::size_t layer, const std::vector<TensorT<T>>& history,
                                  std::type_identity_t<const TensorT<T>*> enc_embedding) {
  if (layer < 1) {
    throw std::invalid_argument("shortcut_source: layer index must be >= 1");
  }
  auto embedding = [&]() -> const TensorT<T>* {
    if (history.empty()) {
      throw std::invalid_argument("shortcut_source: empty state history");
    }
    return &history[0];
  };
  auto source_embeddings = [&]() -> const TensorT<T>* {
    if (!enc_embedding) {
      throw std::invalid_argument("shortcut_source: source embeddings unavailable");
    }
    return enc_embedding;
  };
  switch (variant) {
    case ShortcutVariant::None:
      return nullptr;
    case ShortcutVariant::Lexical:
    case ShortcutVariant::LexicalFusion:
      return site == AttentionSite::SelfAttention ? embedding() : nullptr;
    case ShortcutVariant::NonLexical: {
      if (site != AttentionSite::SelfAttention) return nullptr;
      const std::size_t source = layer >= 2 ? layer - 2 : 0;
      if (source >= history.size()) {
        throw std::invalid_argument("shortcut_source: state " + std::to_string(source) +
                                    " not yet computed");
      }
      return &history[source];
    }
    case ShortcutVariant::DecToEncLexical:
      return site == AttentionSite::DecToEnc ? source_embeddings() : nullptr;
    case ShortcutVariant::SelfPlusDecToEnc:
      return site == AttentionSite::SelfAttention ? embedding() : source_embeddings();
  }
  return nullptr;
}

bool site_has_shortcut(ShortcutVariant variant, AttentionSite site, bool is_decoder,
                       const ShortcutFlags& flags) {
  const bool enabled = is_decoder ? flags.decoder : flags.encoder;
  if (!enabled) return false;
  switch (variant) {
    case ShortcutVariant::None:
      return false;
    case ShortcutVariant::Lexical:
    case ShortcutVariant::LexicalFusion:
    case ShortcutVariant::NonLexical:
      return site == AttentionSite::SelfAttention;
    case ShortcutVariant::DecToEncLexical:
      return site == AttentionSite::DecToEnc && is_decoder;
    case ShortcutVariant::SelfPlusDecToEnc:
      return site == AttentionSite::SelfAttention ||
             (site == AttentionSite::DecToEnc && is_decoder);
  }
  return false;
}

#define LEXSHORT_INSTANTIATE_SHORTCUTS(T)                                                 \
  template std::pair<TensorT<T>, TensorT<T>> project_shortcut<T>(const TensorT<T>&,       \
                                                                 const GateParamsT<T>&);  \
  template TensorT<T> gate<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);   \
  template TensorT<T> fuse<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);   \
  template std::tuple<TensorT<T>, TensorT<T>, TensorT<T>, TensorT<T>> fusion_project<T>(  \
      const TensorT<T>&, const TensorT<T>&, const GateParamsT<T>&);                       \
  template const TensorT<T>* shortcut_source<T>(ShortcutVariant, AttentionSite,           \
                                                std::size_t, const std::vector<TensorT<T>>&, \
                                                const TensorT<T>*);

LEXSHORT_INSTANTIATE_SHORTCUTS(float)
LEXSHORT_INSTANTIATE_SHORTCUTS(double)

#undef LEXSHORT_INSTANTIATE_SHORTCUTS

}  // namespace lexshort
