#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <doctest.h>

#include "lexshort/attention.hpp"
#include "lexshort/model.hpp"
#include "lexshort/tensor.hpp"

using namespace lexshort;

namespace {

template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(av[i]) - static_cast<double>(bv[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i)
    if (av[i] != bv[i]) return false;
  return true;
}

ModelConfig tiny_config(ShortcutVariant variant, std::uint64_t seed = 7) {
  ModelConfig c = ModelConfig::toy(13);
  c.n_layers = 2;
  c.d_model = 16;
  c.head_count = 2;
  c.d_ff = 32;
  c.max_len = 24;
  c.seed = seed;
  c.variant = variant;
  return c;
}

TokenBatch demo_src() { return TokenBatch::from_rows({{4, 5, 6, 7}, {8, 9}}, 0); }
TokenBatch demo_tgt_in() { return TokenBatch::from_rows({{1, 4, 5}, {1, 6, 7}}, 0); }
TokenBatch demo_tgt_out() { return TokenBatch::from_rows({{4, 5, 2}, {6, 7, 2}}, 0); }

template <typename T>
std::map<std::string, TensorT<T>> param_map(const ModelT<T>& m) {
  std::map<std::string, TensorT<T>> out;
  for (auto& [name, t] : m.named_parameters()) out.emplace(name, t);
  return out;
}

// Straight-line baseline forward assembled from the public ops, used as the
// wiring reference for the layered implementation.
Tensor reference_logits(const Model& m, const TokenBatch& src, const TokenBatch& tgt) {
  auto P = param_map(m);
  const auto& cfg = m.config();
  const std::size_t d = cfg.d_model;

  auto positions = [&](std::size_t t) {
    Tensor pe({t, d});
    Tensor all = m.positional_encoding();
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j < d; ++j) pe(i, j) = all(i, j);
    return pe;
  };
  auto embed = [&](const TokenBatch& b) {
    Tensor e = embedding_lookup(P.at("embedding"), b.ids, {b.batch, b.len});
    return add(scale(e, static_cast<float>(std::sqrt(double(d)))), positions(b.len));
  };
  auto attn_params = [&](const std::string& prefix) {
    AttentionParams ap;
    ap.head_count = cfg.head_count;
    ap.w_q = P.at(prefix + ".w_q");
    ap.w_k = P.at(prefix + ".w_k");
    ap.w_v = P.at(prefix + ".w_v");
    ap.w_o = P.at(prefix + ".w_o");
    return ap;
  };
  auto ff = [&](const std::string& prefix, const Tensor& h) {
    Tensor inner = relu(add(matmul(h, P.at(prefix + ".w1"), false, true), P.at(prefix + ".b1")));
    return add(matmul(inner, P.at(prefix + ".w2"), false, true), P.at(prefix + ".b2"));
  };
  auto ln = [&](const std::string& prefix, const Tensor& x) {
    return layer_norm(x, P.at(prefix + ".gamma"), P.at(prefix + ".beta"));
  };

  AttentionMask pad_mask{MaskKind::Padding, src.keep_flags()};
  Tensor src_bias = mask_bias<float>(pad_mask, src.batch, src.len, src.len);
  Tensor h = embed(src);
  for (std::size_t l = 1; l <= cfg.n_layers; ++l) {
    const std::string pre = "enc.l" + std::to_string(l) + ".";
    Tensor a = multi_head_attention(h, h, attn_params(pre + "self"), &src_bias);
    h = ln(pre + "ln1", add(h, a));
    h = ln(pre + "ln2", add(h, ff(pre + "ff", h)));
  }
  Tensor memory = h;

  AttentionMask causal{MaskKind::Causal, {}};
  Tensor self_bias = mask_bias<float>(causal, tgt.batch, tgt.len, tgt.len);
  Tensor cross_bias = mask_bias<float>(pad_mask, tgt.batch, tgt.len, src.len);
  h = embed(tgt);
  for (std::size_t l = 1; l <= cfg.n_layers; ++l) {
    const std::string pre = "dec.l" + std::to_string(l) + ".";
    Tensor a = multi_head_attention(h, h, attn_params(pre + "self"), &self_bias);
    h = ln(pre + "ln1", add(h, a));
    Tensor c = multi_head_attention(h, memory, attn_params(pre + "cross"), &cross_bias);
    h = ln(pre + "ln2", add(h, c));
    h = ln(pre + "ln3", add(h, ff(pre + "ff", h)));
  }
  return matmul(h, P.at("embedding"), false, true);
}

Tensor eval_logits(const Model& m, const TokenBatch& src, const TokenBatch& tgt,
                   SubnetTraceT<float>* dec_trace = nullptr,
                   std::vector<GateActivationT<float>>* gates = nullptr) {
  Rng rng(0);
  SubnetTraceT<float> enc = m.encode(src, false, rng, gates);
  return m.decode(tgt, enc, false, rng, dec_trace, gates);
}

void close_gates(Model& m) {
  for (auto& [name, t] : m.named_parameters()) {
    if (name.find("_sc.b_") == std::string::npos) continue;
    for (auto& v : t.values()) v = -1e4f;
  }
}

std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, ff = c.d_ff, v = c.vocab_size, n = c.n_layers;
  const bool fused = c.variant == ShortcutVariant::LexicalFusion;
  auto site = [&](bool has) -> std::size_t {
    if (!has) return 0;
    return (fused ? 2 * (2 * d) * (2 * d) : 2 * d * d) + 2 * d;
  };
  auto attn_kv = [&](bool replaced) -> std::size_t { return replaced ? 2 * d * d : 4 * d * d; };
  const bool enc_self = site_has_shortcut(c.variant, AttentionSite::SelfAttention, false,
                                          c.shortcut_flags);
  const bool dec_self = site_has_shortcut(c.variant, AttentionSite::SelfAttention, true,
                                          c.shortcut_flags);
  const bool dec_cross = site_has_shortcut(c.variant, AttentionSite::DecToEnc, true,
                                           c.shortcut_flags);
  const std::size_t ff_block = ff * d + ff + d * ff + d;
  std::size_t enc_layer =
      attn_kv(fused && enc_self) + site(enc_self) + ff_block + 2 * 2 * d;
  std::size_t dec_layer = attn_kv(fused && dec_self) + site(dec_self) + 4 * d * d +
                          site(dec_cross) + ff_block + 3 * 2 * d;
  std::size_t total = v * d + n * (enc_layer + dec_layer);
  if (!c.tie_embeddings) total += v * d;
  return total;
}

}  // namespace

TEST_CASE("config json round trip and hash") {
  ModelConfig c = tiny_config(ShortcutVariant::LexicalFusion, 42);
  c.shortcut_flags.decoder = false;
  c.label_smoothing = 0.1;
  ModelConfig back = config_from_json(config_to_json(c));
  CHECK(back.n_layers == c.n_layers);
  CHECK(back.d_model == c.d_model);
  CHECK(back.variant == c.variant);
  CHECK(back.shortcut_flags.decoder == false);
  CHECK(back.label_smoothing == doctest::Approx(0.1));
  CHECK(back.seed == 42);
  CHECK(config_hash(back) == config_hash(c));
  ModelConfig other = c;
  other.d_ff += 1;
  CHECK(config_hash(other) != config_hash(c));
}

TEST_CASE("token batch padding") {
  TokenBatch b = TokenBatch::from_rows({{4, 5, 6}, {7}}, 0);
  CHECK(b.batch == 2);
  CHECK(b.len == 3);
  CHECK(b.at(0, 2) == 6);
  CHECK(b.at(1, 1) == 0);
  CHECK(b.lengths[1] == 1);
  auto keep = b.keep_flags();
  CHECK(keep[1][0] == 1);
  CHECK(keep[1][2] == 0);
}

TEST_CASE("sinusoidal positions closed forms") {
  Model m(tiny_config(ShortcutVariant::None));
  Tensor pe = m.positional_encoding();
  const std::size_t d = m.config().d_model;
  for (std::size_t i = 0; 2 * i < d; ++i) {
    CHECK(pe(0, 2 * i) == 0.0f);
    CHECK(pe(0, 2 * i + 1) == 1.0f);
  }
  CHECK(pe(3, 0) == doctest::Approx(std::sin(3.0)).epsilon(1e-6));
  CHECK(pe(3, 1) == doctest::Approx(std::cos(3.0)).epsilon(1e-6));
  const double angle = 1.0 / std::pow(10000.0, 2.0 / double(d));
  CHECK(pe(1, 2) == doctest::Approx(std::sin(angle)).epsilon(1e-6));
}

TEST_CASE("embed matches hand computation") {
  ModelConfig c = tiny_config(ShortcutVariant::None);
  Model m(c);
  Rng rng(0);
  TokenBatch b = TokenBatch::from_rows({{4, 6}}, 0);
  Tensor pre;
  Tensor e = m.embed(b, false, rng, 0, &pre);
  Tensor table = m.embedding_table();
  Tensor pe = m.positional_encoding();
  const float root_d = std::sqrt(float(c.d_model));
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t j = 0; j < c.d_model; ++j) {
      const float scaled = table(b.at(0, t), j) * root_d;
      CHECK(pre(0, t, j) == scaled);
      CHECK(e(0, t, j) == scaled + pe(t, j));
    }
  }
}

TEST_CASE("embed offset selects later positions") {
  Model m(tiny_config(ShortcutVariant::None));
  Rng rng(0);
  TokenBatch b = TokenBatch::from_rows({{4}}, 0);
  Tensor at0 = m.embed(b, false, rng, 0);
  Tensor at5 = m.embed(b, false, rng, 5);
  Tensor pe = m.positional_encoding();
  for (std::size_t j = 0; j < m.config().d_model; ++j) {
    CHECK(at5(0, 0, j) - at0(0, 0, j) ==
          doctest::Approx(pe(5, j) - pe(0, j)).epsilon(1e-5));
  }
}

TEST_CASE("embed rejects overlong and empty input") {
  Model m(tiny_config(ShortcutVariant::None));
  Rng rng(0);
  std::vector<int> longrow(m.config().max_len + 1, 4);
  CHECK_THROWS_AS(m.embed(TokenBatch::from_rows({longrow}, 0), false, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(m.embed(TokenBatch{}, false, rng), std::invalid_argument);
  CHECK_THROWS_AS(m.encode(TokenBatch::from_rows({{4, 5}, {}}, 0), false, rng),
                  std::invalid_argument);
}

TEST_CASE("plain forward matches straight-line reference bit for bit") {
  Model m(tiny_config(ShortcutVariant::None));
  TokenBatch src = demo_src(), tgt = demo_tgt_in();
  Tensor got = eval_logits(m, src, tgt);
  Tensor want = reference_logits(m, src, tgt);
  CHECK(bitwise_equal(got, want));
}

TEST_CASE("closed gates reproduce the plain model exactly") {
  TokenBatch src = demo_src(), tgt = demo_tgt_in();
  Model base(tiny_config(ShortcutVariant::None));
  Tensor want = eval_logits(base, src, tgt);
  for (ShortcutVariant v : {ShortcutVariant::Lexical, ShortcutVariant::NonLexical,
                            ShortcutVariant::DecToEncLexical, ShortcutVariant::SelfPlusDecToEnc}) {
    CAPTURE(variant_name(v));
    Model sc(tiny_config(v));
    close_gates(sc);
    Tensor got = eval_logits(sc, src, tgt);
    CHECK(bitwise_equal(got, want));
  }
}

TEST_CASE("shared parameters initialize identically across variants") {
  Model a(tiny_config(ShortcutVariant::None));
  Model b(tiny_config(ShortcutVariant::Lexical));
  auto pa = param_map(a);
  for (auto& [name, t] : b.named_parameters()) {
    if (name.find("_sc.") != std::string::npos) continue;
    REQUIRE(pa.count(name) == 1);
    CHECK(bitwise_equal(t, pa.at(name)));
  }
}

TEST_CASE("variant parameter inventory") {
  ModelConfig lex = tiny_config(ShortcutVariant::Lexical);
  Model m(lex);
  auto p = param_map(m);
  CHECK(p.count("enc.l1.self_sc.w_k") == 1);
  CHECK(p.count("enc.l1.self_sc.b_v") == 1);
  CHECK(p.count("dec.l1.self_sc.w_k") == 1);
  CHECK(p.count("dec.l1.cross_sc.w_k") == 0);
  CHECK(p.count("enc.l1.self.w_k") == 1);

  Model fused(tiny_config(ShortcutVariant::LexicalFusion));
  auto pf = param_map(fused);
  CHECK(pf.count("enc.l1.self_sc.w_k_fused") == 1);
  CHECK(pf.count("enc.l1.self.w_k") == 0);
  CHECK(pf.count("enc.l1.self.w_v") == 0);
  CHECK(pf.count("enc.l1.self.w_q") == 1);

  Model d2e(tiny_config(ShortcutVariant::DecToEncLexical));
  auto pd = param_map(d2e);
  CHECK(pd.count("dec.l1.cross_sc.w_k") == 1);
  CHECK(pd.count("enc.l1.self_sc.w_k") == 0);
  CHECK(pd.count("dec.l1.self_sc.w_k") == 0);

  Model both(tiny_config(ShortcutVariant::SelfPlusDecToEnc));
  auto pb = param_map(both);
  CHECK(pb.count("dec.l1.cross_sc.w_k") == 1);
  CHECK(pb.count("enc.l1.self_sc.w_k") == 1);
  CHECK(pb.count("dec.l1.self_sc.w_k") == 1);
}

TEST_CASE("disabling a sub-network's flag removes its shortcuts") {
  ModelConfig c = tiny_config(ShortcutVariant::Lexical);
  c.shortcut_flags.decoder = false;
  Model m(c);
  auto p = param_map(m);
  CHECK(p.count("enc.l1.self_sc.w_k") == 1);
  CHECK(p.count("dec.l1.self_sc.w_k") == 0);
}

TEST_CASE("parameter count matches closed-form accounting") {
  for (ShortcutVariant v :
       {ShortcutVariant::None, ShortcutVariant::Lexical, ShortcutVariant::LexicalFusion,
        ShortcutVariant::NonLexical, ShortcutVariant::DecToEncLexical,
        ShortcutVariant::SelfPlusDecToEnc}) {
    CAPTURE(variant_name(v));
    ModelConfig c = tiny_config(v);
    CHECK(Model(c).parameter_count() == expected_count(c));
    ModelConfig untied = c;
    untied.tie_embeddings = false;
    CHECK(Model(untied).parameter_count() == expected_count(untied));
  }
}

TEST_CASE("parameter growth at full scale matches the published deltas") {
  const std::size_t vocab = 41141;
  std::size_t n_none, n_lex, n_fuse;
  {
    ModelConfig c = ModelConfig::base(vocab);
    n_none = expected_count(c);
    CHECK(Model(c).parameter_count() == n_none);
  }
  {
    ModelConfig c = ModelConfig::base(vocab);
    c.variant = ShortcutVariant::Lexical;
    n_lex = expected_count(c);
    CHECK(Model(c).parameter_count() == n_lex);
  }
  {
    ModelConfig c = ModelConfig::base(vocab);
    c.variant = ShortcutVariant::LexicalFusion;
    n_fuse = expected_count(c);
    CHECK(Model(c).parameter_count() == n_fuse);
  }
  CHECK(n_lex - n_none == 6303744);
  CHECK(n_fuse - n_lex == 12582912);
  // 65,166K reported for the 6-layer tied setup at this vocabulary
  CHECK(std::abs(double(n_none) - 65166000.0) / 65166000.0 < 0.02);
}

TEST_CASE("causal barrier: suffix edits leave prefix logits untouched") {
  Model m(tiny_config(ShortcutVariant::Lexical));
  TokenBatch src = demo_src();
  TokenBatch a = TokenBatch::from_rows({{1, 4, 5, 6}}, 0);
  TokenBatch b = TokenBatch::from_rows({{1, 4, 9, 10}}, 0);
  TokenBatch src1 = TokenBatch::from_rows({{4, 5, 6, 7}}, 0);
  Tensor la = eval_logits(m, src1, a);
  Tensor lb = eval_logits(m, src1, b);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t j = 0; j < m.config().vocab_size; ++j) CHECK(la(0, t, j) == lb(0, t, j));
  bool differs = false;
  for (std::size_t j = 0; j < m.config().vocab_size; ++j)
    differs = differs || la(0, 2, j) != lb(0, 2, j);
  CHECK(differs);
}

TEST_CASE("rows in a batch do not interact") {
  for (ShortcutVariant v : {ShortcutVariant::None, ShortcutVariant::SelfPlusDecToEnc}) {
    CAPTURE(variant_name(v));
    Model m(tiny_config(v));
    TokenBatch src = demo_src(), tgt = demo_tgt_in();
    Tensor batched = eval_logits(m, src, tgt);
    TokenBatch src0 = TokenBatch::from_rows({{4, 5, 6, 7}}, 0);
    TokenBatch tgt0 = TokenBatch::from_rows({{1, 4, 5}}, 0);
    Tensor alone = eval_logits(m, src0, tgt0);
    double worst = 0;
    for (std::size_t t = 0; t < tgt0.len; ++t)
      for (std::size_t j = 0; j < m.config().vocab_size; ++j)
        worst = std::max(worst, std::abs(double(batched(0, t, j)) - double(alone(0, t, j))));
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("tied embeddings share storage with the output projection") {
  Model m(tiny_config(ShortcutVariant::None));
  CHECK(param_map(m).count("out_proj") == 0);
  TokenBatch src = demo_src(), tgt = demo_tgt_in();
  Tensor before = eval_logits(m, src, tgt).copy();
  Tensor table = m.embedding_table();
  for (std::size_t j = 0; j < m.config().d_model; ++j) table(11, j) += 0.5f;
  Tensor after = eval_logits(m, src, tgt);
  bool moved = false;
  auto bv = before.values();
  auto av = after.values();
  for (std::size_t i = 0; i < av.size(); ++i) moved = moved || av[i] != bv[i];
  CHECK(moved);

  ModelConfig untied = tiny_config(ShortcutVariant::None);
  untied.tie_embeddings = false;
  Model u(untied);
  CHECK(param_map(u).count("out_proj") == 1);
}

TEST_CASE("zero layers still runs end to end") {
  ModelConfig c = tiny_config(ShortcutVariant::Lexical);
  c.n_layers = 0;
  Model m(c);
  Rng rng(0);
  TokenBatch src = demo_src(), tgt = demo_tgt_in();
  SubnetTraceT<float> enc = m.encode(src, false, rng);
  CHECK(enc.states.size() == 1);
  Tensor logits = m.decode(tgt, enc, false, rng);
  CHECK(logits.shape() == std::vector<std::size_t>{2, 3, 13});
}

TEST_CASE("zeroed sub-layer weights reduce a layer to stacked normalization") {
  ModelConfig c = tiny_config(ShortcutVariant::None);
  c.n_layers = 1;
  Model m(c);
  auto p = param_map(m);
  for (const char* name : {"enc.l1.self.w_o", "enc.l1.ff.w2"})
    for (auto& v : p.at(name).values()) v = 0.0f;
  Rng rng(0);
  TokenBatch src = demo_src();
  SubnetTraceT<float> enc = m.encode(src, false, rng);
  Tensor h0 = enc.states[0];
  Tensor expect = layer_norm(layer_norm(h0, p.at("enc.l1.ln1.gamma"), p.at("enc.l1.ln1.beta")),
                             p.at("enc.l1.ln2.gamma"), p.at("enc.l1.ln2.beta"));
  CHECK(max_abs_diff(enc.states[1], expect) == 0.0);
}

TEST_CASE("gate activations are recorded per shortcut site") {
  Model m(tiny_config(ShortcutVariant::SelfPlusDecToEnc));
  TokenBatch src = demo_src(), tgt = demo_tgt_in();
  std::vector<GateActivationT<float>> gates;
  eval_logits(m, src, tgt, nullptr, &gates);
  // encoder self + decoder self + decoder cross, per layer
  CHECK(gates.size() == 3 * m.config().n_layers);
  double mean = 0;
  std::size_t n = 0;
  for (const auto& g : gates) {
    CHECK(g.r_k.rank() == 3);
    for (float v : g.r_k.values()) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
      mean += v;
      ++n;
    }
  }
  mean /= double(n);
  CHECK(std::abs(mean - 0.5) < 0.1);
}

TEST_CASE("every shortcut layer's gate sees gradient") {
  ModelConfig c = tiny_config(ShortcutVariant::Lexical);
  Model m(c);
  Tape tape;
  Tape::Scope scope(tape);
  Rng rng(0);
  Tensor loss = m.forward_loss(demo_src(), demo_tgt_in(), demo_tgt_out(), false, rng);
  backward(loss);
  for (auto& [name, t] : m.named_parameters()) {
    if (name.find("_sc.b_k") == std::string::npos) continue;
    CAPTURE(name);
    double norm = 0;
    for (float g : t.grad()) norm += std::abs(double(g));
    CHECK(norm > 0.0);
  }
}

TEST_CASE("loss gradients pass a numeric check end to end") {
  for (ShortcutVariant v : {ShortcutVariant::Lexical, ShortcutVariant::LexicalFusion}) {
    CAPTURE(variant_name(v));
    ModelConfig c = tiny_config(v);
    c.n_layers = 1;
    ModelT<double> m(c);
    TokenBatch src = demo_src(), tin = demo_tgt_in(), tout = demo_tgt_out();
    std::vector<DTensor> inputs;
    for (auto& [name, t] : m.named_parameters()) inputs.push_back(t);
    auto forward = [&]() {
      Rng rng(0);
      return m.forward_loss(src, tin, tout, false, rng);
    };
    double err = grad_check<double>(forward, inputs, 1e-5, 2);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("all-padding target rows are rejected") {
  Model m(tiny_config(ShortcutVariant::None));
  Rng rng(0);
  TokenBatch src = demo_src();
  TokenBatch tin = TokenBatch::from_rows({{1}, {1}}, 0);
  TokenBatch tout = TokenBatch::from_rows({{0}, {0}}, 0);
  CHECK_THROWS_AS(m.forward_loss(src, tin, tout, false, rng), std::invalid_argument);
}

TEST_CASE("decode rejects mismatched batches") {
  Model m(tiny_config(ShortcutVariant::None));
  Rng rng(0);
  SubnetTraceT<float> enc = m.encode(demo_src(), false, rng);
  TokenBatch tgt = TokenBatch::from_rows({{1, 4}}, 0);
  CHECK_THROWS_AS(m.decode(tgt, enc, false, rng), std::invalid_argument);
}

TEST_CASE("stepwise decode matches the teacher-forced pass") {
  for (ShortcutVariant v :
       {ShortcutVariant::None, ShortcutVariant::Lexical, ShortcutVariant::LexicalFusion,
        ShortcutVariant::SelfPlusDecToEnc}) {
    CAPTURE(variant_name(v));
    Model m(tiny_config(v));
    Rng rng(0);
    TokenBatch src = demo_src();
    TokenBatch tgt = TokenBatch::from_rows({{1, 4, 5, 6}, {1, 6, 7, 8}}, 0);
    SubnetTraceT<float> enc = m.encode(src, false, rng);
    Tensor full = m.decode(tgt, enc, false, rng);

    DecodeCacheT<float> cache;
    double worst = 0;
    for (std::size_t t = 0; t < tgt.len; ++t) {
      std::vector<int> step = {tgt.at(0, t), tgt.at(1, t)};
      Tensor logits = m.decode_step(cache, enc, step);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t j = 0; j < m.config().vocab_size; ++j)
          worst = std::max(worst, std::abs(double(logits(b, j)) - double(full(b, t, j))));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("cache gather reorders hypotheses") {
  Model m(tiny_config(ShortcutVariant::Lexical));
  Rng rng(0);
  TokenBatch src = TokenBatch::from_rows({{4, 5, 6}, {4, 5, 6}}, 0);
  SubnetTraceT<float> enc = m.encode(src, false, rng);
  DecodeCacheT<float> cache;
  m.decode_step(cache, enc, {1, 1});
  m.decode_step(cache, enc, {4, 7});

  DecodeCacheT<float> swapped = cache.gather({1, 0});
  CHECK(swapped.len == cache.len);
  Tensor again = m.decode_step(swapped, enc, {7, 4});
  // row 0 of the swapped cache continues hypothesis 1 and vice versa
  DecodeCacheT<float> kept = cache.gather({0, 1});
  Tensor reference = m.decode_step(kept, enc, {4, 7});
  for (std::size_t j = 0; j < m.config().vocab_size; ++j) {
    CHECK(again(0, j) == doctest::Approx(reference(1, j)).epsilon(1e-6));
    CHECK(again(1, j) == doctest::Approx(reference(0, j)).epsilon(1e-6));
  }
}

TEST_CASE("checkpoint round trip preserves every parameter bit") {
  ModelConfig c = tiny_config(ShortcutVariant::LexicalFusion, 99);
  Model m(c);
  const std::string path = "ckpt_roundtrip.bin";
  save_checkpoint(path, m, 1234);
  CheckpointInfo info;
  Model back = load_checkpoint(path, &info);
  CHECK(info.step == 1234);
  CHECK(info.hash == config_hash(c));
  CHECK(back.config().variant == ShortcutVariant::LexicalFusion);
  auto pa = param_map(m);
  for (auto& [name, t] : back.named_parameters()) {
    CAPTURE(name);
    CHECK(bitwise_equal(t, pa.at(name)));
  }
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loading rejects foreign files") {
  const std::string path = "ckpt_bogus.bin";
  {
    std::ofstream out(path);
    out << "{\"kind\":\"something_else\"}\n";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), std::runtime_error);
}

TEST_CASE("pre-positional shortcut source changes the forward pass") {
  ModelConfig c = tiny_config(ShortcutVariant::Lexical);
  ModelConfig pre = c;
  pre.positional_shortcut_source = false;
  Model a(c), b(pre);
  TokenBatch src = demo_src(), tgt = demo_tgt_in();
  Tensor la = eval_logits(a, src, tgt);
  Tensor lb = eval_logits(b, src, tgt);
  CHECK(max_abs_diff(la, lb) > 0.0);
}

TEST_CASE("invalid configurations are rejected") {
  ModelConfig c = tiny_config(ShortcutVariant::None);
  c.vocab_size = 0;
  CHECK_THROWS_AS(Model{c}, std::invalid_argument);
  ModelConfig odd = tiny_config(ShortcutVariant::None);
  odd.d_model = 17;
  CHECK_THROWS_AS(Model{odd}, std::invalid_argument);
}
