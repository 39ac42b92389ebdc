#include "lexshort/attention.hpp"

#include <cmath>
#include <stdexcept>

#include "doctest.h"

using namespace lexshort;

namespace {

template <typename T>
AttentionParamsT<T> random_params(std::size_t d, std::size_t heads, Rng& rng) {
  AttentionParamsT<T> p;
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  p.w_q = TensorT<T>::uniform({d, d}, -bound, bound, rng);
  p.w_k = TensorT<T>::uniform({d, d}, -bound, bound, rng);
  p.w_v = TensorT<T>::uniform({d, d}, -bound, bound, rng);
  p.w_o = TensorT<T>::uniform({d, d}, -bound, bound, rng);
  p.head_count = heads;
  return p;
}

template <typename T>
TensorT<T> identity_matrix(std::size_t d) {
  TensorT<T> eye({d, d});
  for (std::size_t i = 0; i < d; ++i) eye(i, i) = T(1);
  return eye;
}

}  // namespace

TEST_CASE("mask_bias layouts") {
  SUBCASE("causal is lower-triangular in query x key layout") {
    AttentionMask mask{MaskKind::Causal, {}};
    Tensor bias = mask_bias<float>(mask, 1, 4, 4);
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t k = 0; k < 4; ++k)
        CHECK(bias(0, 0, q, k) == (k <= q ? 0.0f : -1e9f));
  }
  SUBCASE("incremental causal query attends to the whole prefix") {
    AttentionMask mask{MaskKind::Causal, {}};
    Tensor bias = mask_bias<float>(mask, 1, 1, 5);
    for (std::size_t k = 0; k < 5; ++k) CHECK(bias(0, 0, 0, k) == 0.0f);
  }
  SUBCASE("padding masks the flagged keys for every query") {
    AttentionMask mask{MaskKind::Padding, {{1, 1, 0}, {1, 0, 0}}};
    Tensor bias = mask_bias<float>(mask, 2, 2, 3);
    CHECK(bias(0, 0, 0, 1) == 0.0f);
    CHECK(bias(0, 0, 0, 2) == -1e9f);
    CHECK(bias(1, 0, 1, 1) == -1e9f);
    CHECK(bias(1, 0, 1, 0) == 0.0f);
  }
  SUBCASE("fully masked query row is rejected") {
    AttentionMask empty{MaskKind::Padding, {{0, 0}}};
    CHECK_THROWS_AS(mask_bias<float>(empty, 1, 1, 2), std::invalid_argument);
    AttentionMask both{MaskKind::Both, {{0, 1, 1}}};
    // query 0 may only see key 0, which is padding
    CHECK_THROWS_AS(mask_bias<float>(both, 1, 3, 3), std::invalid_argument);
  }
  SUBCASE("batch/row count mismatches are rejected") {
    AttentionMask mask{MaskKind::Padding, {{1, 1}}};
    CHECK_THROWS_AS(mask_bias<float>(mask, 2, 1, 2), std::invalid_argument);
    CHECK_THROWS_AS(mask_bias<float>(mask, 1, 1, 3), std::invalid_argument);
  }
}

TEST_CASE("project_qkv with identity weights returns reshaped inputs") {
  const std::size_t d = 8, heads = 2;
  AttentionParamsT<float> p;
  p.w_q = identity_matrix<float>(d);
  p.w_k = identity_matrix<float>(d);
  p.w_v = identity_matrix<float>(d);
  p.w_o = identity_matrix<float>(d);
  p.head_count = heads;

  Rng rng(1);
  Tensor x = Tensor::uniform({2, 3, d}, -1, 1, rng);
  auto [q, k, v] = project_qkv(x, x, p);
  Tensor expected = split_heads(x, heads);
  REQUIRE(q.shape() == expected.shape());
  for (std::size_t i = 0; i < q.size(); ++i) {
    CHECK(q.values()[i] == expected.values()[i]);
    CHECK(k.values()[i] == expected.values()[i]);
    CHECK(v.values()[i] == expected.values()[i]);
  }

  Tensor wrong({2, 3, d + 1});
  CHECK_THROWS_AS(project_qkv(wrong, wrong, p), std::invalid_argument);
}

TEST_CASE("single key makes attention return V regardless of Q") {
  Rng rng(2);
  Tensor q = Tensor::uniform({1, 2, 3, 4}, -5, 5, rng);
  Tensor k = Tensor::uniform({1, 2, 1, 4}, -5, 5, rng);
  Tensor v = Tensor::uniform({1, 2, 1, 4}, -5, 5, rng);
  Tensor out = scaled_dot_attention(q, k, v, nullptr);
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t j = 0; j < 4; ++j)
        CHECK(out(0, h, t, j) == doctest::Approx(v(0, h, 0, j)).epsilon(1e-6));
}

TEST_CASE("identical keys average the value rows") {
  Rng rng(3);
  const std::size_t t_k = 5, d_k = 4;
  Tensor q = Tensor::uniform({1, 1, 2, d_k}, -2, 2, rng);
  Tensor key_row = Tensor::uniform({d_k}, -2, 2, rng);
  Tensor k({1, 1, t_k, d_k});
  for (std::size_t t = 0; t < t_k; ++t)
    for (std::size_t j = 0; j < d_k; ++j) k(0, 0, t, j) = key_row.values()[j];
  Tensor v = Tensor::uniform({1, 1, t_k, d_k}, -2, 2, rng);
  Tensor out = scaled_dot_attention(q, k, v, nullptr);
  for (std::size_t qi = 0; qi < 2; ++qi)
    for (std::size_t j = 0; j < d_k; ++j) {
      double mean = 0;
      for (std::size_t t = 0; t < t_k; ++t) mean += v(0, 0, t, j);
      mean /= t_k;
      CHECK(out(0, 0, qi, j) == doctest::Approx(mean).epsilon(1e-6));
    }
}

TEST_CASE("unit basis query/key yields the 1/sqrt(d_k) score") {
  // two keys: e1 and 0. score(e1,e1) = 1/sqrt(4) = 0.5, score(e1,0) = 0,
  // so the first attention weight is exp(0.5)/(exp(0.5)+1).
  const std::size_t d_k = 4;
  DTensor q({1, 1, 1, d_k}, {1, 0, 0, 0});
  DTensor k({1, 1, 2, d_k}, {1, 0, 0, 0, 0, 0, 0, 0});
  DTensor v({1, 1, 2, d_k}, {1, 0, 0, 0, 0, 0, 0, 0});
  DTensor out = scaled_dot_attention(q, k, v, nullptr);
  const double w0 = std::exp(0.5) / (std::exp(0.5) + 1.0);
  CHECK(out(0, 0, 0, 0) == doctest::Approx(w0).epsilon(1e-9));
}

TEST_CASE("attention weights sum to one: all-ones values reproduce ones") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor q = Tensor::uniform({2, 2, 3, 4}, -3, 3, rng);
    Tensor k = Tensor::uniform({2, 2, 5, 4}, -3, 3, rng);
    Tensor v = Tensor::full({2, 2, 5, 4}, 1.0f);
    AttentionMask mask{MaskKind::Padding, {{1, 1, 1, 0, 0}, {1, 1, 1, 1, 0}}};
    Tensor bias = mask_bias<float>(mask, 2, 3, 5);
    Tensor out = scaled_dot_attention(q, k, v, &bias);
    for (float val : out.values()) CHECK(val == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("uniform attention is invariant to permuting value rows") {
  Rng rng(5);
  const std::size_t t_k = 4, d_k = 4;
  Tensor q = Tensor::uniform({1, 1, 2, d_k}, -1, 1, rng);
  Tensor k = Tensor::zeros({1, 1, t_k, d_k});  // equal keys -> uniform weights
  Tensor v = Tensor::uniform({1, 1, t_k, d_k}, -1, 1, rng);
  Tensor v_perm({1, 1, t_k, d_k});
  const std::size_t perm[t_k] = {2, 0, 3, 1};
  for (std::size_t t = 0; t < t_k; ++t)
    for (std::size_t j = 0; j < d_k; ++j) v_perm(0, 0, t, j) = v(0, 0, perm[t], j);
  Tensor a = scaled_dot_attention(q, k, v, nullptr);
  Tensor b = scaled_dot_attention(q, k, v_perm, nullptr);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-6));
}

TEST_CASE("scaled_dot_attention rejects shape mismatches and dead rows") {
  Tensor q({1, 1, 2, 4});
  Tensor k({1, 1, 3, 5});
  Tensor v({1, 1, 3, 4});
  CHECK_THROWS_AS(scaled_dot_attention(q, k, v, nullptr), std::invalid_argument);
  Tensor k2({1, 1, 3, 4});
  Tensor v2({1, 1, 2, 4});
  CHECK_THROWS_AS(scaled_dot_attention(q, k2, v2, nullptr), std::invalid_argument);

  Tensor dead_bias = Tensor::full({1, 1, 2, 3}, -1e9f);
  CHECK_THROWS_AS(scaled_dot_attention(q, k2, Tensor({1, 1, 3, 4}), &dead_bias),
                  std::invalid_argument);
}

TEST_CASE("one head equals raw scaled_dot_attention plus output projection") {
  Rng rng(6);
  const std::size_t d = 8;
  auto p = random_params<float>(d, 1, rng);
  Tensor h_s = Tensor::uniform({2, 3, d}, -1, 1, rng);
  Tensor h_t = Tensor::uniform({2, 4, d}, -1, 1, rng);

  Tensor out = multi_head_attention(h_s, h_t, p, nullptr);

  auto [q, k, v] = project_qkv(h_s, h_t, p);
  Tensor manual = matmul(merge_heads(scaled_dot_attention(q, k, v, nullptr)), p.w_o, false,
                         true);
  REQUIRE(out.shape() == manual.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    CHECK(out.values()[i] == manual.values()[i]);
}

TEST_CASE("causal mask blocks information from future positions, bit-exact") {
  Rng rng(7);
  const std::size_t d = 8, t = 5;
  auto p = random_params<float>(d, 2, rng);
  Tensor x = Tensor::uniform({1, t, d}, -1, 1, rng);
  AttentionMask mask{MaskKind::Causal, {}};
  Tensor bias = mask_bias<float>(mask, 1, t, t);
  Tensor base = multi_head_attention(x, x, p, &bias);

  for (std::size_t j = 1; j < t; ++j) {
    Tensor poked = x.copy();
    for (std::size_t f = 0; f < d; ++f) poked(0, j, f) += 7.5f;
    Tensor out = multi_head_attention(poked, poked, p, &bias);
    for (std::size_t i = 0; i < j; ++i)
      for (std::size_t f = 0; f < d; ++f) CHECK(out(0, i, f) == base(0, i, f));
  }
}

TEST_CASE("identity kv_override reproduces the vanilla path") {
  Rng rng(8);
  const std::size_t d = 8;
  auto p = random_params<float>(d, 2, rng);
  Tensor h_s = Tensor::uniform({2, 3, d}, -1, 1, rng);
  Tensor h_t = Tensor::uniform({2, 4, d}, -1, 1, rng);
  auto [q, k, v] = project_qkv(h_s, h_t, p);
  KvOverrideT<float> same{k, v};
  Tensor with = multi_head_attention(h_s, h_t, p, nullptr, &same);
  Tensor without = multi_head_attention(h_s, h_t, p, nullptr);
  for (std::size_t i = 0; i < with.size(); ++i)
    CHECK(with.values()[i] == without.values()[i]);

  KvOverrideT<float> wrong{split_heads(Tensor({2, 5, d}), 2), v};
  CHECK_THROWS_AS(multi_head_attention(h_s, h_t, p, nullptr, &wrong),
                  std::invalid_argument);
}

TEST_CASE("grad check through the whole attention block") {
  Rng rng(9);
  const std::size_t d = 8;
  auto p = random_params<double>(d, 2, rng);
  DTensor h_s = DTensor::uniform({1, 3, d}, -1, 1, rng);
  DTensor h_t = DTensor::uniform({1, 4, d}, -1, 1, rng);
  DTensor w = DTensor::uniform({1, 3, d}, -1, 1, rng);
  AttentionMask mask{MaskKind::Padding, {{1, 1, 1, 0}}};
  DTensor bias = mask_bias<double>(mask, 1, 3, 4);
  auto f = [&]() {
    return sum(mul(w, multi_head_attention(h_s, h_t, p, &bias)));
  };
  CHECK(grad_check<double>(f, {h_s, h_t, p.w_q, p.w_k, p.w_v, p.w_o}, 1e-5) <= 1e-5);
}
