// Copyright 2026 The mmrecall Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/numcore/gradcheck.h"
#include "mmr/numcore/ops.h"

namespace mmr::nc {
namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c,
                     bool requires_grad = true, double sd = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal(0.0, sd);
  return Tensor::from({r, c}, std::move(v), requires_grad);
}

AttentionParams random_attention_params(Rng& rng, std::size_t d) {
  return AttentionParams{random_tensor(rng, d, d, true, 0.4), random_tensor(rng, 1, d, true, 0.1),
                         random_tensor(rng, d, d, true, 0.4),
                         random_tensor(rng, d, d, true, 0.4), random_tensor(rng, 1, d, true, 0.1),
                         random_tensor(rng, d, d, true, 0.4), random_tensor(rng, 1, d, true, 0.1)};
}

// Independent dense attention: explicit per-head score matrices with -inf for
// masked keys, no shared code with the library kernel.
std::vector<double> dense_attention_oracle(const std::vector<double>& q,
                                           const std::vector<double>& kv,
                                           std::size_t n, std::size_t m,
                                           std::size_t d, std::size_t heads,
                                           const std::vector<bool>& valid,
                                           const AttentionParams& p) {
  auto project = [d](const std::vector<double>& x, std::size_t rows,
                     const Tensor& w, const Tensor& b) {
    std::vector<double> y(rows * d);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = b.data()[j];
        for (std::size_t t = 0; t < d; ++t) s += x[i * d + t] * w.at(t, j);
        y[i * d + j] = s;
      }
    return y;
  };
  const auto Q = project(q, n, p.wq, p.bq);
  const auto K = project(kv, m, p.wk, Tensor::zeros({1, d}));
  const auto V = project(kv, m, p.wv, p.bv);
  const std::size_t dh = d / heads;
  std::vector<double> A(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(m);
      for (std::size_t j = 0; j < m; ++j) {
        if (!valid[j]) {
          s[j] = -INFINITY;
          continue;
        }
        double dot = 0;
        for (std::size_t c = 0; c < dh; ++c) dot += Q[i * d + h * dh + c] * K[j * d + h * dh + c];
        s[j] = dot / std::sqrt(double(dh));
      }
      double mx = -INFINITY;
      for (double x : s) mx = std::max(mx, x);
      double z = 0;
      for (double& x : s) {
        x = std::isinf(x) ? 0.0 : std::exp(x - mx);
        z += x;
      }
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t c = 0; c < dh; ++c)
          A[i * d + h * dh + c] += s[j] / z * V[j * d + h * dh + c];
    }
  }
  return project(A, n, p.wo, p.bo);
}

TEST(CosineSimilarity, SelfAntipodalOrthogonal) {
  std::vector<double> v{0.3, -1.2, 2.0};
  std::vector<double> neg{-0.3, 1.2, -2.0};
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-15);
  EXPECT_NEAR(cosine_similarity(v, neg), -1.0, 1e-15);
  std::vector<double> e1{1, 0}, e2{0, 1};
  EXPECT_EQ(cosine_similarity(e1, e2), 0.0);
}

TEST(CosineSimilarity, ZeroNormIsDomainError) {
  std::vector<double> z{0, 0}, e1{1, 0};
  EXPECT_THROW(cosine_similarity(z, e1), DomainError);
}

TEST(SoftmaxRows, Examples) {
  auto u = softmax_rows(Tensor::from({1, 2}, {0, 0}));
  EXPECT_DOUBLE_EQ(u.data()[0], 0.5);
  EXPECT_DOUBLE_EQ(u.data()[1], 0.5);

  auto big = softmax_rows(Tensor::from({1, 2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(big.data()[0]));
  EXPECT_NEAR(big.data()[0], 1.0, 1e-15);
  EXPECT_LT(big.data()[1], 1e-300);

  // exp(ln 2) = 2, so the row is (2, 1) / 3.
  auto l2 = softmax_rows(Tensor::from({1, 2}, {std::log(2.0), 0}));
  EXPECT_NEAR(l2.data()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(l2.data()[1], 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxRows, RowsSumToOneAndTranslationInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto m = random_tensor(rng, 4, 7, false, 5.0);
    auto s = softmax_rows(m);
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_GE(s.at(i, j), 0.0);
        sum += s.at(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    // Shift by a constant that is exactly representable after addition so
    // the max-subtracted inputs agree bit for bit.
    std::vector<double> shifted(m.data().begin(), m.data().end());
    const double c = std::ldexp(1.0, 6);
    for (auto& x : shifted) x = (x + c);
    auto s2 = softmax_rows(Tensor::from({4, 7}, shifted));
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_NEAR(s.data()[i], s2.data()[i], 1e-12);
    }
  }
}

TEST(SoftmaxRows, TranslationInvarianceIsExactForDyadicRows) {
  auto a = softmax_rows(Tensor::from({1, 3}, {0.5, -1.25, 2.0}));
  auto b = softmax_rows(Tensor::from({1, 3}, {8.5, 6.75, 10.0}));
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(a.data()[j], b.data()[j]);
}

TEST(GradCheck, QuadraticIsExact) {
  Rng rng(1);
  auto x = random_tensor(rng, 1, 10);
  const double err = grad_check([](const Tensor& t) { return sum_squares(t); }, x, 1e-4);
  EXPECT_LT(err, 1e-7);
}

TEST(GradCheck, RejectsBadEps) {
  auto x = Tensor::row({1.0}, true);
  auto f = [](const Tensor& t) { return sum_squares(t); };
  EXPECT_THROW(grad_check(f, x, 0.0), DomainError);
  EXPECT_THROW(grad_check(f, x, 0.1), DomainError);
}

TEST(GradCheck, NonFiniteIsNumericError) {
  auto x = Tensor::row({1.0, 2.0}, true);
  auto f = [](const Tensor& t) { return scale(sum_all(t), INFINITY); };
  EXPECT_THROW(grad_check(f, x, 1e-4), NumericError);
}

// Every differentiable primitive against central differences.
TEST(GradCheck, AllPrimitives) {
  Rng rng(11);
  for (int seed = 0; seed < 5; ++seed) {
    auto a = random_tensor(rng, 3, 4);
    auto b = random_tensor(rng, 4, 5);
    auto c = random_tensor(rng, 6, 4);
    auto bias = random_tensor(rng, 1, 5);
    auto w = random_tensor(rng, 1, 4);  // probe weights for reductions
    auto gain = random_tensor(rng, 1, 4);
    auto shift = random_tensor(rng, 1, 4);
    const std::vector<std::size_t> ids{2, 0, 2, 5};
    const std::vector<std::size_t> targets{1, 0, 4};

    std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
        {"matmul", [&] { return sum_squares(matmul(a, b)); }},
        {"matmul_nt", [&] { return sum_squares(matmul_nt(a, c)); }},
        {"linear", [&] { return sum_squares(linear(a, b, bias)); }},
        {"add_row", [&] { return sum_squares(add_row(a, w)); }},
        {"gelu", [&] { return sum_squares(gelu(a)); }},
        {"layer_norm", [&] { return sum_squares(matmul(layer_norm(a, gain, shift), b)); }},
        {"softmax_rows", [&] { return sum_squares(matmul(softmax_rows(a), b)); }},
        {"l2_normalize_rows", [&] { return sum_squares(matmul(l2_normalize_rows(a), b)); }},
        {"mean_rows", [&] { return sum_squares(matmul(mean_rows(c), b)); }},
        {"concat_rows", [&] {
           std::vector<Tensor> parts{a, c};
           return sum_squares(matmul(concat_rows(parts), b));
         }},
        {"concat_cols", [&] {
           std::vector<Tensor> parts{a, gelu(a)};
           return sum_squares(matmul_nt(concat_cols(parts), concat_cols(parts)));
         }},
        {"slice_rows", [&] { return sum_squares(matmul(slice_rows(c, 2, 3), b)); }},
        {"gather_rows", [&] { return sum_squares(matmul(gather_rows(c, ids), b)); }},
        {"additive_margin", [&] {
           return cross_entropy_rows(additive_margin(matmul(a, b), 3.0, 0.2), targets);
         }},
        {"cross_entropy_rows", [&] { return cross_entropy_rows(linear(a, b, bias), targets); }},
    };
    for (const auto& [name, f] : cases) {
      auto r = grad_check_params(f, {a, b, c, bias, w, gain, shift}, 1e-5);
      EXPECT_LT(r.max_relative_error, 1e-4) << name << " seed " << seed;
    }
  }
}

TEST(GradCheck, MultiHeadAttentionWithMask) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t d = 8;
    auto q = random_tensor(rng, 3, d);
    auto kv = random_tensor(rng, 5, d);
    auto p = random_attention_params(rng, d);
    AttentionMask mask{{true, false, true, true, false}};
    auto f = [&] { return sum_squares(multi_head_attention(q, kv, mask, p, 2)); };
    auto r = grad_check_params(f, {q, kv, p.wq, p.bq, p.wk, p.wv, p.bv, p.wo, p.bo}, 1e-5);
    EXPECT_LT(r.max_relative_error, 1e-4)
        << "worst analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
  }
}

TEST(MultiHeadAttention, SingleValidTokenReturnsItsValueProjection) {
  Rng rng(8);
  const std::size_t d = 8;
  auto p = random_attention_params(rng, d);
  auto q = random_tensor(rng, 2, d, false);
  auto kv1 = random_tensor(rng, 1, d, false);
  auto out = multi_head_attention(q, kv1, AttentionMask::all_valid(1), p, 4);
  // Expected: (kv W_v + b_v) W_o + b_o for every query row.
  auto expected = linear(linear(kv1, p.wv, p.bv), p.wo, p.bo);
  ASSERT_EQ(out.shape(), q.shape());
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(out.at(i, j), expected.at(0, j), 1e-12);

  // The same token surrounded by masked junk gives the identical output.
  auto junk = random_tensor(rng, 3, d, false, 10.0);
  std::vector<Tensor> parts{slice_rows(junk, 0, 2), kv1, slice_rows(junk, 2, 1)};
  auto kv4 = concat_rows(parts);
  AttentionMask mask{{false, false, true, false}};
  auto out4 = multi_head_attention(q, kv4, mask, p, 4);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out.data()[i], out4.data()[i]);
}

TEST(MultiHeadAttention, MatchesDenseOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 8, n = 3, m = 4, heads = 2;
    auto p = random_attention_params(rng, d);
    auto q = random_tensor(rng, n, d, false);
    auto kv = random_tensor(rng, m, d, false);
    std::vector<bool> valid{true, true, true, true};
    if (trial % 2) valid[rng.below(m)] = false;
    auto out = multi_head_attention(q, kv, AttentionMask{valid}, p, heads);
    auto oracle = dense_attention_oracle({q.data().begin(), q.data().end()},
                                         {kv.data().begin(), kv.data().end()}, n,
                                         m, d, heads, valid, p);
    for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(out.data()[i], oracle[i], 1e-12);
  }
}

TEST(MultiHeadAttention, MaskedContentDoesNotLeak) {
  Rng rng(33);
  const std::size_t d = 16;
  auto p = random_attention_params(rng, d);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = random_tensor(rng, 4, d, false);
    auto kv = random_tensor(rng, 6, d, false);
    AttentionMask mask{{true, false, true, false, false, true}};
    auto base = multi_head_attention(q, kv, mask, p, 4);
    std::vector<double> altered(kv.data().begin(), kv.data().end());
    for (std::size_t j : {1u, 3u, 4u})
      for (std::size_t c = 0; c < d; ++c) altered[j * d + c] = rng.normal(0, 100.0);
    auto out = multi_head_attention(q, Tensor::from({6, d}, altered), mask, p, 4);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base.data()[i], out.data()[i], 1e-6);
  }
}

TEST(MultiHeadAttention, ShapeErrors) {
  Rng rng(2);
  auto p = random_attention_params(rng, 6);
  auto q = random_tensor(rng, 2, 6, false);
  auto kv = random_tensor(rng, 3, 6, false);
  EXPECT_THROW(multi_head_attention(q, kv, AttentionMask::all_valid(2), p, 2), ShapeError);
  EXPECT_THROW(multi_head_attention(q, kv, AttentionMask::all_valid(3), p, 4), ShapeError);
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor::from({2, 3}, {1, 2, 3}), ShapeError);
  auto t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_THROW(t.item(), ShapeError);
  EXPECT_THROW(matmul(t, t), ShapeError);
}

TEST(Tensor, GradientsAccumulateAcrossUses) {
  auto x = Tensor::row({1.0, -2.0}, true);
  std::vector<Tensor> terms{sum_squares(x), sum_all(scale(x, 3.0))};
  add_scalars(terms).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -4.0 + 3.0);
}

TEST(Tensor, ConstantsReceiveNoGradient) {
  auto x = Tensor::row({1.0, 2.0}, true);
  auto c = Tensor::row({3.0, 4.0}, false);
  sum_squares(add(x, c)).backward();
  EXPECT_TRUE(x.has_grad());
  EXPECT_FALSE(c.has_grad());
}

}  // namespace
}  // namespace mmr::nc
