#include "lexshort/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "lexshort/serialize.hpp"

namespace lexshort {

using nlohmann::json;

ModelConfig ModelConfig::toy(std::size_t vocab) {
  ModelConfig c;
  c.n_layers = 3;
  c.d_model = 64;
  c.head_count = 4;
  c.d_ff = 256;
  c.vocab_size = vocab;
  return c;
}

ModelConfig ModelConfig::base(std::size_t vocab) {
  ModelConfig c;
  c.n_layers = 6;
  c.d_model = 512;
  c.head_count = 8;
  c.d_ff = 2048;
  c.vocab_size = vocab;
  c.max_len = 256;
  return c;
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["n_layers"] = c.n_layers;
  j["d_model"] = c.d_model;
  j["head_count"] = c.head_count;
  j["d_ff"] = c.d_ff;
  j["vocab_size"] = c.vocab_size;
  j["dropout_rate"] = c.dropout_rate;
  j["label_smoothing"] = c.label_smoothing;
  j["variant"] = variant_name(c.variant);
  j["shortcut_encoder"] = c.shortcut_flags.encoder;
  j["shortcut_decoder"] = c.shortcut_flags.decoder;
  j["tie_embeddings"] = c.tie_embeddings;
  j["gate_enabled"] = c.gate_enabled;
  j["positional_shortcut_source"] = c.positional_shortcut_source;
  j["max_len"] = c.max_len;
  j["seed"] = c.seed;
  return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.head_count = j.at("head_count").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  c.variant = parse_variant(j.value("variant", std::string("none")));
  c.shortcut_flags.encoder = j.value("shortcut_encoder", true);
  c.shortcut_flags.decoder = j.value("shortcut_decoder", true);
  c.tie_embeddings = j.value("tie_embeddings", true);
  c.gate_enabled = j.value("gate_enabled", true);
  c.positional_shortcut_source = j.value("positional_shortcut_source", true);
  c.max_len = j.value("max_len", c.max_len);
  c.seed = j.value("seed", c.seed);
  return c;
}

std::string config_hash(const ModelConfig& config) {
  const std::string dump = config_to_json(config);  // keys are sorted
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TokenBatch TokenBatch::from_rows(const std::vector<std::vector<int>>& rows, int pad_id) {
  TokenBatch b;
  b.pad_id = pad_id;
  b.batch = rows.size();
  for (const auto& r : rows) b.len = std::max(b.len, r.size());
  b.ids.assign(b.batch * b.len, pad_id);
  b.lengths.resize(b.batch);
  for (std::size_t i = 0; i < b.batch; ++i) {
    b.lengths[i] = rows[i].size();
    std::copy(rows[i].begin(), rows[i].end(), b.ids.begin() + i * b.len);
  }
  return b;
}

std::vector<std::vector<char>> TokenBatch::keep_flags() const {
  std::vector<std::vector<char>> keep(batch, std::vector<char>(len, 0));
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t j = 0; j < lengths[i]; ++j) keep[i][j] = 1;
  return keep;
}

namespace {

template <typename T>
TensorT<T> sinusoidal_positions(std::size_t max_len, std::size_t d) {
  TensorT<T> pe({max_len, d});
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, (2.0 * static_cast<double>(i)) / static_cast<double>(d));
      pe(pos, 2 * i) = static_cast<T>(std::sin(angle));
      if (2 * i + 1 < d) pe(pos, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

}  // namespace

template <typename T>
ModelT<T>::ModelT(const ModelConfig& config) : config_(config) {
  if (config_.vocab_size == 0) throw std::invalid_argument("model: vocab_size must be set");
  if (config_.d_model == 0 || config_.head_count == 0 ||
      config_.d_model % config_.head_count != 0) {
    throw std::invalid_argument("model: d_model " + std::to_string(config_.d_model) +
                                " not divisible by head_count " +
                                std::to_string(config_.head_count));
  }
  if (config_.d_ff == 0) throw std::invalid_argument("model: d_ff must be positive");
  if (config_.max_len == 0) throw std::invalid_argument("model: max_len must be positive");

  const std::size_t d = config_.d_model;
  Rng root(config_.seed);

  auto matrix = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    Rng r = root.split(name);
    const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(rows + cols)));
    TensorT<T> t = TensorT<T>::uniform({rows, cols}, -bound, bound, r);
    t.set_requires_grad(true);
    return t;
  };
  auto zeros_vec = [&](std::size_t n) {
    TensorT<T> t({n});
    t.set_requires_grad(true);
    return t;
  };
  auto ones_vec = [&](std::size_t n) {
    TensorT<T> t = TensorT<T>::full({n}, T(1));
    t.set_requires_grad(true);
    return t;
  };

  {
    Rng r = root.split("embedding");
    embedding_ = TensorT<T>::normal({config_.vocab_size, d}, T(0),
                                    static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))), r);
    embedding_.set_requires_grad(true);
  }
  if (!config_.tie_embeddings) w_out_ = matrix("out_proj", config_.vocab_size, d);
  positions_ = sinusoidal_positions<T>(config_.max_len, d);

  const bool fused = config_.variant == ShortcutVariant::LexicalFusion;
  auto build_layer = [&](bool is_decoder, std::size_t index) {
    const std::string prefix = (is_decoder ? "dec.l" : "enc.l") + std::to_string(index) + ".";
    LayerParamsT<T> layer;

    const bool self_sc = site_has_shortcut(config_.variant, AttentionSite::SelfAttention,
                                           is_decoder, config_.shortcut_flags);
    layer.self_attn.head_count = config_.head_count;
    layer.self_attn.w_q = matrix(prefix + "self.w_q", d, d);
    layer.self_attn.w_o = matrix(prefix + "self.w_o", d, d);
    if (self_sc && fused) {
      // the fused projection produces both halves; no plain K/V projection
      layer.self_gate.w_k_fused = matrix(prefix + "self_sc.w_k_fused", 2 * d, 2 * d);
      layer.self_gate.w_v_fused = matrix(prefix + "self_sc.w_v_fused", 2 * d, 2 * d);
    } else {
      layer.self_attn.w_k = matrix(prefix + "self.w_k", d, d);
      layer.self_attn.w_v = matrix(prefix + "self.w_v", d, d);
      if (self_sc) {
        layer.self_gate.w_k_sc = matrix(prefix + "self_sc.w_k", d, d);
        layer.self_gate.w_v_sc = matrix(prefix + "self_sc.w_v", d, d);
      }
    }
    if (self_sc) {
      layer.self_gate.b_k = zeros_vec(d);
      layer.self_gate.b_v = zeros_vec(d);
    }

    if (is_decoder) {
      const bool cross_sc = site_has_shortcut(config_.variant, AttentionSite::DecToEnc, true,
                                              config_.shortcut_flags);
      layer.cross_attn.head_count = config_.head_count;
      layer.cross_attn.w_q = matrix(prefix + "cross.w_q", d, d);
      layer.cross_attn.w_k = matrix(prefix + "cross.w_k", d, d);
      layer.cross_attn.w_v = matrix(prefix + "cross.w_v", d, d);
      layer.cross_attn.w_o = matrix(prefix + "cross.w_o", d, d);
      if (cross_sc) {
        layer.cross_gate.w_k_sc = matrix(prefix + "cross_sc.w_k", d, d);
        layer.cross_gate.w_v_sc = matrix(prefix + "cross_sc.w_v", d, d);
        layer.cross_gate.b_k = zeros_vec(d);
        layer.cross_gate.b_v = zeros_vec(d);
      }
    }

    layer.w_ff1 = matrix(prefix + "ff.w1", config_.d_ff, d);
    layer.b_ff1 = zeros_vec(config_.d_ff);
    layer.w_ff2 = matrix(prefix + "ff.w2", d, config_.d_ff);
    layer.b_ff2 = zeros_vec(d);
    layer.ln1_g = ones_vec(d);
    layer.ln1_b = zeros_vec(d);
    layer.ln2_g = ones_vec(d);
    layer.ln2_b = zeros_vec(d);
    if (is_decoder) {
      layer.ln3_g = ones_vec(d);
      layer.ln3_b = zeros_vec(d);
    }
    return layer;
  };

  for (std::size_t l = 1; l <= config_.n_layers; ++l) encoder_.push_back(build_layer(false, l));
  for (std::size_t l = 1; l <= config_.n_layers; ++l) decoder_.push_back(build_layer(true, l));
}

template <typename T>
std::vector<std::pair<std::string, TensorT<T>>> ModelT<T>::named_parameters() const {
  std::vector<std::pair<std::string, TensorT<T>>> out;
  auto push = [&](const std::string& name, const TensorT<T>& t) {
    if (t.size() > 0) out.emplace_back(name, t);
  };
  push("embedding", embedding_);
  push("out_proj", w_out_);
  auto push_layer = [&](const LayerParamsT<T>& layer, bool is_decoder, std::size_t index) {
    const std::string prefix = (is_decoder ? "dec.l" : "enc.l") + std::to_string(index) + ".";
    push(prefix + "self.w_q", layer.self_attn.w_q);
    push(prefix + "self.w_k", layer.self_attn.w_k);
    push(prefix + "self.w_v", layer.self_attn.w_v);
    push(prefix + "self.w_o", layer.self_attn.w_o);
    push(prefix + "self_sc.w_k", layer.self_gate.w_k_sc);
    push(prefix + "self_sc.w_v", layer.self_gate.w_v_sc);
    push(prefix + "self_sc.w_k_fused", layer.self_gate.w_k_fused);
    push(prefix + "self_sc.w_v_fused", layer.self_gate.w_v_fused);
    push(prefix + "self_sc.b_k", layer.self_gate.b_k);
    push(prefix + "self_sc.b_v", layer.self_gate.b_v);
    if (is_decoder) {
      push(prefix + "cross.w_q", layer.cross_attn.w_q);
      push(prefix + "cross.w_k", layer.cross_attn.w_k);
      push(prefix + "cross.w_v", layer.cross_attn.w_v);
      push(prefix + "cross.w_o", layer.cross_attn.w_o);
      push(prefix + "cross_sc.w_k", layer.cross_gate.w_k_sc);
      push(prefix + "cross_sc.w_v", layer.cross_gate.w_v_sc);
      push(prefix + "cross_sc.b_k", layer.cross_gate.b_k);
      push(prefix + "cross_sc.b_v", layer.cross_gate.b_v);
    }
    push(prefix + "ff.w1", layer.w_ff1);
    push(prefix + "ff.b1", layer.b_ff1);
    push(prefix + "ff.w2", layer.w_ff2);
    push(prefix + "ff.b2", layer.b_ff2);
    push(prefix + "ln1.gamma", layer.ln1_g);
    push(prefix + "ln1.beta", layer.ln1_b);
    push(prefix + "ln2.gamma", layer.ln2_g);
    push(prefix + "ln2.beta", layer.ln2_b);
    if (is_decoder) {
      push(prefix + "ln3.gamma", layer.ln3_g);
      push(prefix + "ln3.beta", layer.ln3_b);
    }
  };
  for (std::size_t i = 0; i < encoder_.size(); ++i) push_layer(encoder_[i], false, i + 1);
  for (std::size_t i = 0; i < decoder_.size(); ++i) push_layer(decoder_[i], true, i + 1);
  return out;
}

template <typename T>
std::size_t ModelT<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

template <typename T>
TensorT<T> ModelT<T>::embed(const TokenBatch& tokens, bool training, Rng& rng,
                            std::size_t offset, TensorT<T>* pre_positional) const {
  if (tokens.batch == 0 || tokens.len == 0) {
    throw std::invalid_argument("embed: empty token batch");
  }
  if (offset + tokens.len > config_.max_len) {
    throw std::invalid_argument("embed: sequence length " + std::to_string(offset + tokens.len) +
                                " exceeds max_len " + std::to_string(config_.max_len));
  }
  TensorT<T> scaled =
      scale(embedding_lookup(embedding_, tokens.ids, {tokens.batch, tokens.len}),
            static_cast<T>(std::sqrt(static_cast<double>(config_.d_model))));
  if (pre_positional) *pre_positional = scaled;
  TensorT<T> pos({tokens.len, config_.d_model});
  for (std::size_t t = 0; t < tokens.len; ++t)
    for (std::size_t i = 0; i < config_.d_model; ++i) pos(t, i) = positions_(offset + t, i);
  return dropout(add(scaled, pos), config_.dropout_rate, rng, training);
}

template <typename T>
TensorT<T> ModelT<T>::run_layer(const LayerParamsT<T>& layer, std::size_t layer_index,
                                bool is_decoder, const TensorT<T>& h_prev,
                                const std::vector<TensorT<T>>& history,
                                const SubnetTraceT<T>* enc, const TensorT<T>* self_bias,
                                const TensorT<T>* cross_bias, bool training, Rng& rng,
                                std::vector<GateActivationT<T>>* gates,
                                DecodeCacheT<T>* cache) const {
  const double rate = config_.dropout_rate;
  const std::size_t heads = config_.head_count;
  const TensorT<T>* enc_source = nullptr;
  if (enc) {
    enc_source =
        config_.positional_shortcut_source ? &enc->states.front() : &enc->table_embedding;
  }

  auto gated_kv = [&](const AttentionParamsT<T>& attn, const GateParamsT<T>& gp,
                      const TensorT<T>& h_kv, const TensorT<T>& source,
                      AttentionSite site) -> std::pair<TensorT<T>, TensorT<T>> {
    TensorT<T> k_sc, v_sc, k_full, v_full;
    if (gp.fused()) {
      std::tie(k_sc, k_full, v_sc, v_full) = fusion_project(source, h_kv, gp);
    } else {
      k_full = matmul(h_kv, attn.w_k, false, true);
      v_full = matmul(h_kv, attn.w_v, false, true);
      std::tie(k_sc, v_sc) = project_shortcut(source, gp);
    }
    TensorT<T> k_p, v_p;
    if (config_.gate_enabled) {
      TensorT<T> r_k = gate(k_sc, k_full, gp.b_k);
      TensorT<T> r_v = gate(v_sc, v_full, gp.b_v);
      k_p = fuse(r_k, k_sc, k_full);
      v_p = fuse(r_v, v_sc, v_full);
      if (gates) gates->push_back({is_decoder, site, layer_index, r_k, r_v});
    } else {
      k_p = add(k_sc, k_full);
      v_p = add(v_sc, v_full);
    }
    return {k_p, v_p};
  };

  // self-attention sub-layer
  const bool self_sc = site_has_shortcut(config_.variant, AttentionSite::SelfAttention,
                                         is_decoder, config_.shortcut_flags);
  TensorT<T> attn_out;
  {
    KvOverrideT<T> kv;
    bool have_kv = false;
    if (self_sc) {
      const TensorT<T>* source = shortcut_source(config_.variant, AttentionSite::SelfAttention,
                                                 layer_index, history, enc_source);
      if (source) {
        auto [k_p, v_p] = gated_kv(layer.self_attn, layer.self_gate, h_prev, *source,
                                   AttentionSite::SelfAttention);
        kv.k = split_heads(k_p, heads);
        kv.v = split_heads(v_p, heads);
        have_kv = true;
      }
    }
    if (!have_kv && cache) {
      // plain layers still feed the cache so stepwise decode is uniform
      kv.k = split_heads(matmul(h_prev, layer.self_attn.w_k, false, true), heads);
      kv.v = split_heads(matmul(h_prev, layer.self_attn.w_v, false, true), heads);
      have_kv = true;
    }
    if (cache) {
      auto& slot = cache->layers[layer_index - 1];
      slot.self_k = slot.self_k.size() == 0 ? kv.k : concat<T>({slot.self_k, kv.k}, 2);
      slot.self_v = slot.self_v.size() == 0 ? kv.v : concat<T>({slot.self_v, kv.v}, 2);
      kv.k = slot.self_k;
      kv.v = slot.self_v;
    }
    attn_out = have_kv
                   ? multi_head_attention(h_prev, h_prev, layer.self_attn, self_bias, &kv)
                   : multi_head_attention(h_prev, h_prev, layer.self_attn, self_bias);
  }
  TensorT<T> h = layer_norm(add(h_prev, dropout(attn_out, rate, rng, training)), layer.ln1_g,
                            layer.ln1_b);

  // decoder-to-encoder sub-layer
  if (is_decoder) {
    if (!enc) throw std::invalid_argument("run_layer: decoder layer without encoder states");
    const bool cross_sc = site_has_shortcut(config_.variant, AttentionSite::DecToEnc, true,
                                            config_.shortcut_flags);
    const TensorT<T>& memory = enc->states.back();
    TensorT<T> cross_out;
    KvOverrideT<T> kv;
    bool have_kv = false;
    if (cache) {
      auto& slot = cache->layers[layer_index - 1];
      if (slot.cross_k.size() == 0) {
        if (cross_sc) {
          const TensorT<T>* source = shortcut_source(config_.variant, AttentionSite::DecToEnc,
                                                     layer_index, history, enc_source);
          auto [k_p, v_p] =
              gated_kv(layer.cross_attn, layer.cross_gate, memory, *source,
                       AttentionSite::DecToEnc);
          slot.cross_k = split_heads(k_p, heads);
          slot.cross_v = split_heads(v_p, heads);
        } else {
          slot.cross_k = split_heads(matmul(memory, layer.cross_attn.w_k, false, true), heads);
          slot.cross_v = split_heads(matmul(memory, layer.cross_attn.w_v, false, true), heads);
        }
      }
      kv.k = slot.cross_k;
      kv.v = slot.cross_v;
      have_kv = true;
    } else if (cross_sc) {
      const TensorT<T>* source = shortcut_source(config_.variant, AttentionSite::DecToEnc,
                                                 layer_index, history, enc_source);
      if (source) {
        auto [k_p, v_p] = gated_kv(layer.cross_attn, layer.cross_gate, memory, *source,
                                   AttentionSite::DecToEnc);
        kv.k = split_heads(k_p, heads);
        kv.v = split_heads(v_p, heads);
        have_kv = true;
      }
    }
    cross_out = have_kv
                    ? multi_head_attention(h, memory, layer.cross_attn, cross_bias, &kv)
                    : multi_head_attention(h, memory, layer.cross_attn, cross_bias);
    h = layer_norm(add(h, dropout(cross_out, rate, rng, training)), layer.ln2_g, layer.ln2_b);
  }

  // feed-forward sub-layer
  TensorT<T> ff = add(matmul(relu(add(matmul(h, layer.w_ff1, false, true), layer.b_ff1)),
                             layer.w_ff2, false, true),
                      layer.b_ff2);
  const TensorT<T>& g = is_decoder ? layer.ln3_g : layer.ln2_g;
  const TensorT<T>& b = is_decoder ? layer.ln3_b : layer.ln2_b;
  return layer_norm(add(h, dropout(ff, rate, rng, training)), g, b);
}

template <typename T>
SubnetTraceT<T> ModelT<T>::encode(const TokenBatch& src, bool training, Rng& rng,
                                  std::vector<GateActivationT<T>>* gates) const {
  if (src.batch == 0) throw std::invalid_argument("encode: empty batch");
  for (std::size_t i = 0; i < src.batch; ++i) {
    if (src.lengths[i] == 0) {
      throw std::invalid_argument("encode: empty source sentence at batch entry " +
                                  std::to_string(i));
    }
  }
  SubnetTraceT<T> trace;
  trace.mask = AttentionMask{MaskKind::Padding, src.keep_flags()};
  TensorT<T> bias = mask_bias<T>(trace.mask, src.batch, src.len, src.len);
  TensorT<T> h = embed(src, training, rng, 0, &trace.table_embedding);
  trace.states.push_back(h);
  std::vector<TensorT<T>> history;
  history.push_back(config_.positional_shortcut_source ? h : trace.table_embedding);
  for (std::size_t l = 1; l <= config_.n_layers; ++l) {
    h = run_layer(encoder_[l - 1], l, false, h, history, nullptr, &bias, nullptr, training, rng,
                  gates, nullptr);
    trace.states.push_back(h);
    history.push_back(h);
  }
  return trace;
}

template <typename T>
TensorT<T> ModelT<T>::decode(const TokenBatch& tgt_in, const SubnetTraceT<T>& enc,
                             bool training, Rng& rng, SubnetTraceT<T>* trace,
                             std::vector<GateActivationT<T>>* gates) const {
  if (enc.states.empty()) throw std::invalid_argument("decode: encoder trace is empty");
  const std::size_t batch = enc.states.front().extent(0);
  if (tgt_in.batch != batch) {
    throw std::invalid_argument("decode: target batch " + std::to_string(tgt_in.batch) +
                                " does not match source batch " + std::to_string(batch));
  }
  const std::size_t t_src = enc.states.front().extent(1);
  AttentionMask causal{MaskKind::Causal, {}};
  TensorT<T> self_bias = mask_bias<T>(causal, batch, tgt_in.len, tgt_in.len);
  TensorT<T> cross_bias = mask_bias<T>(enc.mask, batch, tgt_in.len, t_src);

  TensorT<T> table;
  TensorT<T> h = embed(tgt_in, training, rng, 0, &table);
  std::vector<TensorT<T>> history;
  history.push_back(config_.positional_shortcut_source ? h : table);
  if (trace) {
    trace->mask = causal;
    trace->table_embedding = table;
    trace->states.push_back(h);
  }
  for (std::size_t l = 1; l <= config_.n_layers; ++l) {
    h = run_layer(decoder_[l - 1], l, true, h, history, &enc, &self_bias, &cross_bias, training,
                  rng, gates, nullptr);
    history.push_back(h);
    if (trace) trace->states.push_back(h);
  }
  return output_logits(h);
}

template <typename T>
TensorT<T> ModelT<T>::decode_step(DecodeCacheT<T>& cache, const SubnetTraceT<T>& enc,
                                  const std::vector<int>& next_ids) const {
  if (enc.states.empty()) throw std::invalid_argument("decode_step: encoder trace is empty");
  const std::size_t batch = enc.states.front().extent(0);
  if (next_ids.size() != batch) {
    throw std::invalid_argument("decode_step: expected " + std::to_string(batch) +
                                " tokens, got " + std::to_string(next_ids.size()));
  }
  if (cache.layers.empty()) cache.layers.resize(config_.n_layers);
  if (cache.layers.size() != config_.n_layers) {
    throw std::invalid_argument("decode_step: cache layer count mismatch");
  }
  const std::size_t t_src = enc.states.front().extent(1);

  TokenBatch step;
  step.batch = batch;
  step.len = 1;
  step.ids = next_ids;
  step.lengths.assign(batch, 1);

  Rng rng(0);
  TensorT<T> cross_bias = mask_bias<T>(enc.mask, batch, 1, t_src);
  TensorT<T> table;
  TensorT<T> h = embed(step, false, rng, cache.len, &table);
  std::vector<TensorT<T>> history;
  history.push_back(config_.positional_shortcut_source ? h : table);
  for (std::size_t l = 1; l <= config_.n_layers; ++l) {
    h = run_layer(decoder_[l - 1], l, true, h, history, &enc, nullptr, &cross_bias, false, rng,
                  nullptr, &cache);
    history.push_back(h);
  }
  cache.len += 1;
  return reshape(output_logits(h), {batch, config_.vocab_size});
}

template <typename T>
TensorT<T> ModelT<T>::forward_loss(const TokenBatch& src, const TokenBatch& tgt_in,
                                   const TokenBatch& tgt_out, bool training, Rng& rng,
                                   std::vector<GateActivationT<T>>* gates) const {
  if (tgt_in.batch != tgt_out.batch || tgt_in.len != tgt_out.len) {
    throw std::invalid_argument("forward_loss: teacher input/output shapes differ");
  }
  SubnetTraceT<T> enc = encode(src, training, rng, gates);
  TensorT<T> logits = decode(tgt_in, enc, training, rng, nullptr, gates);
  std::vector<T> weights(tgt_out.ids.size(), T(0));
  bool any = false;
  for (std::size_t i = 0; i < tgt_out.ids.size(); ++i) {
    if (tgt_out.ids[i] != tgt_out.pad_id) {
      weights[i] = T(1);
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("forward_loss: batch contains only padding");
  return cross_entropy(logits, std::span<const int>(tgt_out.ids),
                       std::span<const T>(weights), static_cast<T>(config_.label_smoothing));
}

template <typename T>
TensorT<T> ModelT<T>::output_logits(const TensorT<T>& hidden) const {
  const TensorT<T>& table = config_.tie_embeddings ? embedding_ : w_out_;
  return matmul(hidden, table, false, true);
}

template <typename T>
DecodeCacheT<T> DecodeCacheT<T>::gather(const std::vector<std::size_t>& rows) const {
  auto take = [&](const TensorT<T>& t) {
    if (t.size() == 0) return t;
    const auto& s = t.shape();
    const std::size_t per_row = t.size() / s[0];
    std::vector<std::size_t> shape = s;
    shape[0] = rows.size();
    TensorT<T> out(shape);
    auto ov = out.values();
    auto iv = t.values();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] >= s[0]) throw std::invalid_argument("gather: row index out of range");
      std::copy(iv.begin() + rows[r] * per_row, iv.begin() + (rows[r] + 1) * per_row,
                ov.begin() + r * per_row);
    }
    return out;
  };
  DecodeCacheT<T> out;
  out.len = len;
  out.layers.resize(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.layers[i].self_k = take(layers[i].self_k);
    out.layers[i].self_v = take(layers[i].self_v);
    out.layers[i].cross_k = take(layers[i].cross_k);
    out.layers[i].cross_v = take(layers[i].cross_v);
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelT<float>& model, std::size_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  json manifest;
  manifest["kind"] = "checkpoint";
  manifest["config"] = json::parse(config_to_json(model.config()));
  manifest["step"] = step;
  manifest["hash"] = config_hash(model.config());
  auto params = model.named_parameters();
  json names = json::array();
  for (const auto& [name, t] : params) names.push_back(name);
  manifest["params"] = names;
  out << manifest.dump() << "\n";
  for (const auto& [name, t] : params) write_tensor_blob(out, name, t);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

ModelT<float> load_checkpoint(const std::string& path, CheckpointInfo* info) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_checkpoint: missing manifest");
  json manifest = json::parse(line);
  if (manifest.value("kind", "") != "checkpoint") {
    throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
  }
  ModelConfig config = config_from_json(manifest.at("config").dump());
  ModelT<float> model(config);
  auto params = model.named_parameters();
  const auto names = manifest.at("params").get<std::vector<std::string>>();
  if (names.size() != params.size()) {
    throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != params[i].first) {
      throw std::runtime_error("load_checkpoint: parameter order mismatch at " + names[i]);
    }
    NamedTensor blob = read_tensor_blob(in);
    if (blob.name != names[i]) {
      throw std::runtime_error("load_checkpoint: expected blob " + names[i] + ", found " +
                               blob.name);
    }
    if (blob.tensor.shape() != params[i].second.shape()) {
      throw std::runtime_error("load_checkpoint: shape mismatch for " + names[i]);
    }
    std::copy(blob.tensor.values().begin(), blob.tensor.values().end(),
              params[i].second.values().begin());
  }
  if (info) {
    info->config = config;
    info->step = manifest.value("step", std::size_t(0));
    info->hash = manifest.value("hash", "");
  }
  return model;
}

template class ModelT<float>;
template class ModelT<double>;
template struct DecodeCacheT<float>;
template struct DecodeCacheT<double>;

}  // namespace lexshort
