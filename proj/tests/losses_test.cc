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
#include <deque>
#include <map>
#include <set>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/losses/losses.h"
#include "mmr/losses/sampler.h"
#include "mmr/numcore/gradcheck.h"
#include "mmr/numcore/ops.h"

namespace mmr::losses {
namespace {

using nc::Tensor;

// Values from an independent direct evaluation (python3, math.log/exp):
//   log(1 + e^-1)   = 0.31326168751822286
//   log(1 + e^-1.8) = 0.15297761052607406
constexpr double kInfoNceOrthonormal = 0.31326168751822286;
constexpr double kAmInfoNceOrthonormal = 0.15297761052607406;

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, bool grad = true) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({r, c}, std::move(v), grad);
}

std::vector<double> normalized_row(const Tensor& t, std::size_t i) {
  std::vector<double> r(t.data().begin() + i * t.cols(), t.data().begin() + (i + 1) * t.cols());
  double n = 0;
  for (double x : r) n += x * x;
  for (double& x : r) x /= std::sqrt(n);
  return r;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain-double evaluation of the AM-InfoNCE formula, written from the
// definition without touching the autodiff path.
double am_oracle(const Tensor& anchors, const Tensor& cands, double gamma,
                 double margin, const Tensor& extra = {}) {
  const std::size_t n = anchors.rows();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = normalized_row(anchors, i);
    const double pos = std::exp(gamma * (dot(a, normalized_row(cands, i)) - margin));
    double denom = pos;
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) denom += std::exp(gamma * dot(a, normalized_row(cands, j)));
    }
    if (extra.defined()) {
      for (std::size_t k = 0; k < extra.rows(); ++k) {
        denom += std::exp(gamma * dot(a, normalized_row(extra, k)));
      }
    }
    total += -std::log(pos / denom);
  }
  return total / n;
}

LossConfig config(double gamma, double margin) {
  LossConfig c;
  c.gamma = gamma;
  c.margin = margin;
  return c;
}

TEST(InfoNce, HandDerivedValues) {
  auto e = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(info_nce({e, e, {0, 1}}).item(), kInfoNceOrthonormal, 1e-9);

  auto same = Tensor::from({2, 2}, {1, 1, 1, 1});
  EXPECT_NEAR(info_nce({same, same, {0, 0}}).item(), std::log(2.0), 1e-12);

  Rng rng(1);
  auto q = random_tensor(rng, 1, 5), t = random_tensor(rng, 1, 5);
  EXPECT_NEAR(info_nce({q, t, {0}}).item(), 0.0, 1e-15);
}

TEST(AmInfoNce, HandDerivedValues) {
  auto e = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_NEAR(am_info_nce(e, e, config(2.0, 0.1)).item(), kAmInfoNceOrthonormal, 1e-9);

  Rng rng(2);
  auto q = random_tensor(rng, 1, 5), t = random_tensor(rng, 1, 5);
  EXPECT_NEAR(am_info_nce(q, t, config(20.0, 0.2)).item(), 0.0, 1e-15);
}

TEST(AmInfoNce, ReducesToInfoNce) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(15);
    auto q = random_tensor(rng, n, d), t = random_tensor(rng, n, d);
    const double a = am_info_nce(q, t, config(1.0, 0.0)).item();
    const double b = info_nce({q, t, std::vector<std::int64_t>(n, 0)}).item();
    EXPECT_NEAR(a, b, 1e-9);
  }
}

TEST(AmInfoNce, MatchesFormulaOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(15);
    auto q = random_tensor(rng, n, d), t = random_tensor(rng, n, d);
    auto mem = random_tensor(rng, rng.below(5) + 1, d, false);
    const double g = rng.uniform(0.5, 20.0), m = rng.uniform(0.0, 0.5);
    EXPECT_NEAR(am_info_nce(q, t, config(g, m)).item(), am_oracle(q, t, g, m), 1e-9);
    EXPECT_NEAR(am_info_nce(q, t, config(g, m), mem).item(), am_oracle(q, t, g, m, mem), 1e-9);
  }
}

TEST(AmInfoNce, Errors) {
  EXPECT_THROW(am_info_nce(Tensor::zeros({0, 3}), Tensor::zeros({0, 3}), LossConfig{}),
               DomainError);
  EXPECT_THROW(info_nce({Tensor::zeros({0, 3}), Tensor::zeros({0, 3}), {}}), DomainError);
  auto e = Tensor::from({2, 2}, {1, 0, 0, 1});
  EXPECT_THROW(am_info_nce(e, e, config(0.0, 0.1)), DomainError);
  EXPECT_THROW(am_info_nce(e, e, config(1.0, 1.0)), DomainError);
  EXPECT_THROW(am_info_nce(e, Tensor::from({1, 2}, {1, 0}), LossConfig{}), ShapeError);
}

TEST(Losses, NonNegativeAndPermutationInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(6), d = 4;
    auto q = random_tensor(rng, n, d, false), t = random_tensor(rng, n, d, false);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    auto pq = nc::gather_rows(q, perm), pt = nc::gather_rows(t, perm);
    const auto cfg = config(rng.uniform(1, 20), rng.uniform(0, 0.5));
    const double base = am_info_nce(q, t, cfg).item();
    EXPECT_GE(base, 0.0);
    EXPECT_NEAR(base, am_info_nce(pq, pt, cfg).item(), 1e-12);
    EXPECT_NEAR(info_nce({q, t, {}}).item(), info_nce({pq, pt, {}}).item(), 1e-12);
  }
}

// Rotating a negative candidate toward the first anchor raises s(q_0, t_1)
// and must never lower the loss, with or without the margin.
TEST(Losses, MonotoneInOffDiagonalSimilarity) {
  auto q = Tensor::from({2, 2}, {1, 0, 0, 1});
  for (const auto& cfg : {config(1.0, 0.0), config(4.0, 0.1), config(20.0, 0.2)}) {
    double prev = -1;
    for (int step = 0; step <= 10; ++step) {
      const double angle = 1.5 - 0.15 * step;
      auto t = Tensor::from({2, 2}, {0.6, 0.8, std::cos(angle), std::sin(angle)});
      const auto q0 = nc::slice_rows(q, 0, 1), t0 = nc::slice_rows(t, 0, 1);
      const auto t1 = nc::slice_rows(t, 1, 1);
      const double lib = am_info_nce(q0, t0, cfg, t1).item();
      EXPECT_NEAR(lib, am_oracle(q0, t0, cfg.gamma, cfg.margin, t1), 1e-12);
      if (step > 0) {
        EXPECT_GT(lib, prev);
      }
      prev = lib;
    }
  }
}

TEST(ModalityBalance, DegenerateAndSymmetry) {
  auto q = Tensor::from({1, 3}, {0.2, 0.3, -0.1});
  auto fuser = [&](FusionVariant) { return q; };
  EXPECT_NEAR(modality_balance_loss(q, fuser, LossConfig{}).item(), 0.0, 1e-15);

  // Swapping the two default variants swaps two pairs of terms.
  Rng rng(7);
  auto q3 = random_tensor(rng, 3, 4), a = random_tensor(rng, 3, 4), b = random_tensor(rng, 3, 4);
  const LossConfig cfg;
  EXPECT_NEAR(modality_balance_loss(q3, a, b, cfg).item(),
              modality_balance_loss(q3, b, a, cfg).item(), 1e-12);
}

TEST(ModalityBalance, EqualsFourTermOracle) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = random_tensor(rng, 3, 6), fi = random_tensor(rng, 3, 6), ft = random_tensor(rng, 3, 6);
    const auto cfg = config(rng.uniform(1, 20), rng.uniform(0, 0.5));
    const double expected = am_oracle(q, fi, cfg.gamma, cfg.margin) +
                            am_oracle(q, ft, cfg.gamma, cfg.margin) +
                            am_oracle(fi, q, cfg.gamma, cfg.margin) +
                            am_oracle(ft, q, cfg.gamma, cfg.margin);
    EXPECT_NEAR(modality_balance_loss(q, fi, ft, cfg).item(), expected, 1e-9);
  }
}

TEST(Xbm, CapacityZeroHoldsNothing) {
  XbmBuffer xbm(0);
  auto e = Tensor::from({2, 2}, {1, 0, 0, 1});
  std::vector<std::int64_t> ids{1, 2};
  EXPECT_FALSE(xbm_push_and_negatives(xbm, e, ids, Side::kQuery).defined());
  EXPECT_FALSE(xbm_push_and_negatives(xbm, e, ids, Side::kQuery).defined());
  EXPECT_EQ(xbm.size(), 0u);
}

TEST(Xbm, FifoEviction) {
  XbmBuffer xbm(2);
  auto e = Tensor::from({3, 2}, {1, 0, 0, 1, 0.6, 0.8});
  std::vector<std::int64_t> ids{1, 2, 3};
  xbm.push(e, ids, Side::kFusion);
  ASSERT_EQ(xbm.size(), 2u);
  EXPECT_EQ(xbm.entries()[0].class_id, 2);
  EXPECT_EQ(xbm.entries()[1].class_id, 3);
  auto neg = xbm.negatives(Side::kFusion);
  EXPECT_EQ(neg.rows(), 2u);
  EXPECT_DOUBLE_EQ(neg.at(1, 1), 0.8);
}

TEST(Xbm, MatchesReferenceQueue) {
  Rng rng(9);
  XbmBuffer xbm(128);
  std::deque<std::pair<std::int64_t, Side>> ref;
  std::int64_t next = 0;
  for (int round = 0; round < 200; ++round) {
    const std::size_t n = 1 + rng.below(9);
    const Side side = rng.below(2) ? Side::kQuery : Side::kFusion;
    auto embs = random_tensor(rng, n, 4, false);
    std::vector<std::int64_t> ids(n);
    for (auto& id : ids) id = next++;

    // Expected negatives: reference lane contents before the push.
    std::vector<std::int64_t> expected;
    for (const auto& [id, s] : ref) {
      if (s == side) expected.push_back(id);
    }
    auto neg = xbm_push_and_negatives(xbm, embs, ids, side);
    EXPECT_EQ(neg.defined() ? neg.rows() : 0u, expected.size());
    for (auto id : ids) {
      ref.emplace_back(id, side);
      if (ref.size() > 128) ref.pop_front();
    }
    ASSERT_EQ(xbm.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_EQ(xbm.entries()[i].class_id, ref[i].first);
      EXPECT_EQ(xbm.entries()[i].side, ref[i].second);
      double norm = 0;
      for (double x : xbm.entries()[i].embedding) norm += x * x;
      EXPECT_NEAR(norm, 1.0, 1e-12);
    }
  }
}

struct ToyFusion {
  Tensor x_full, x_noimg, x_notitle, w, b;
  Fuser fuser() const {
    return [this](FusionVariant v) {
      const Tensor& x = v == FusionVariant::kFull         ? x_full
                        : v == FusionVariant::kDefaultImage ? x_noimg
                                                            : x_notitle;
      return nc::gelu(nc::linear(x, w, b));
    };
  }
};

ToyFusion random_fusion(Rng& rng, std::size_t n, std::size_t d) {
  return {random_tensor(rng, n, d), random_tensor(rng, n, d), random_tensor(rng, n, d),
          random_tensor(rng, d, d), random_tensor(rng, 1, d)};
}

TEST(FinalLoss, DegenerateSingleAlignedIsZero) {
  auto q = Tensor::from({1, 3}, {0.5, -0.5, 0.7});
  XbmBuffer xbm(16);
  std::vector<std::int64_t> ids{4};
  auto loss = final_loss(q, [&](FusionVariant) { return q; }, xbm, ids, LossConfig{});
  EXPECT_NEAR(loss.item(), 0.0, 1e-15);
  EXPECT_EQ(xbm.size(), 2u);  // one query + one fusion entry pushed
}

TEST(FinalLoss, CapacityZeroEqualsNoMemoryComposite) {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    auto q = random_tensor(rng, 4, 6);
    auto toy = random_fusion(rng, 4, 6);
    std::vector<std::int64_t> ids{0, 0, 0, 0};
    XbmBuffer xbm(0);
    const LossConfig cfg;
    const double got = final_loss(q, toy.fuser(), xbm, ids, cfg).item();
    auto f = toy.fuser()(FusionVariant::kFull);
    const double expected = 2 * am_oracle(q, f, cfg.gamma, cfg.margin) +
                            2 * am_oracle(f, q, cfg.gamma, cfg.margin) +
                            modality_balance_loss(q, toy.fuser(), cfg).item();
    EXPECT_NEAR(got, expected, 1e-9);
  }
}

TEST(FinalLoss, DuplicatePositiveInMemoryIncreasesLoss) {
  Rng rng(11);
  auto q = random_tensor(rng, 3, 6);
  auto toy = random_fusion(rng, 3, 6);
  std::vector<std::int64_t> ids{1, 1, 1};
  const LossConfig cfg;
  XbmBuffer empty(64);
  const double base = final_loss(q, toy.fuser(), empty, ids, cfg).item();

  XbmBuffer with_dup(64);
  auto f = toy.fuser()(FusionVariant::kFull);
  std::vector<std::int64_t> one{1};
  with_dup.push(nc::slice_rows(f, 0, 1), one, Side::kFusion);
  const double dup = final_loss(q, toy.fuser(), with_dup, ids, cfg).item();
  EXPECT_GT(dup, base);
}

TEST(FinalLoss, GradientCheck) {
  Rng rng(12);
  for (int seed = 0; seed < 5; ++seed) {
    auto q = random_tensor(rng, 4, 8);
    auto toy = random_fusion(rng, 4, 8);
    XbmBuffer xbm(32);
    std::vector<std::int64_t> ids{2, 2, 2, 2};
    xbm.push(random_tensor(rng, 5, 8, false), std::vector<std::int64_t>(5, 2), Side::kFusion);
    xbm.push(random_tensor(rng, 3, 8, false), std::vector<std::int64_t>(3, 2), Side::kQuery);
    const auto cfg = config(5.0, 0.2);
    auto f = [&] {
      XbmBuffer snapshot = xbm;
      return final_loss(q, toy.fuser(), snapshot, ids, cfg);
    };
    auto r = nc::grad_check_params(f, {q, toy.x_full, toy.x_noimg, toy.x_notitle, toy.w, toy.b}, 1e-4);
    EXPECT_LT(r.max_relative_error, 1e-4);
  }
}

TEST(LossGradients, InfoNceAndAmInfoNce) {
  Rng rng(13);
  for (int seed = 0; seed < 10; ++seed) {
    auto q = random_tensor(rng, 4, 8), t = random_tensor(rng, 4, 8);
    auto mem = random_tensor(rng, 3, 8, false);
    EXPECT_LT(nc::grad_check_params([&] { return info_nce({q, t, {}}); }, {q, t}, 1e-4)
                  .max_relative_error,
              1e-4);
    EXPECT_LT(nc::grad_check_params([&] { return am_info_nce(q, t, config(20, 0.2), mem); },
                                    {q, t}, 1e-4)
                  .max_relative_error,
              1e-4);
  }
}

TEST(ClassBatches, TwoFullClasses) {
  std::vector<std::int64_t> labels{0, 0, 0, 0, 1, 1, 1, 1};
  Rng rng(1);
  auto batches = class_based_batches(labels, 4, rng);
  ASSERT_EQ(batches.size(), 2u);
  for (const auto& b : batches) {
    EXPECT_EQ(b.indices.size(), 4u);
    EXPECT_FALSE(b.has_filler());
    for (auto i : b.indices) EXPECT_EQ(labels[i], b.class_id);
  }
}

TEST(ClassBatches, ShortClassIsToppedUpWithFlaggedFiller) {
  // Class 7 has 3 items, class 9 has 5: one full class-9 batch, then the
  // class-7 remainder takes class 9's leftover as filler.
  std::vector<std::int64_t> labels{7, 7, 7, 9, 9, 9, 9, 9};
  Rng rng(42);
  auto batches = class_based_batches(labels, 4, rng);
  ASSERT_EQ(batches.size(), 2u);
  const SampledBatch* short_batch = nullptr;
  for (const auto& b : batches) {
    if (b.class_id == 7) short_batch = &b;
  }
  ASSERT_NE(short_batch, nullptr);
  ASSERT_EQ(short_batch->indices.size(), 4u);
  int own = 0, filler = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    if (short_batch->filler[k]) {
      ++filler;
      EXPECT_EQ(labels[short_batch->indices[k]], 9);
    } else {
      ++own;
      EXPECT_EQ(labels[short_batch->indices[k]], 7);
    }
  }
  EXPECT_EQ(own, 3);
  EXPECT_EQ(filler, 1);
}

TEST(ClassBatches, EveryItemOnceAndDeterministic) {
  Rng gen(3);
  std::vector<std::int64_t> labels(257);
  for (auto& l : labels) l = static_cast<std::int64_t>(gen.below(13));
  Rng a(77), b(77);
  auto x = class_based_batches(labels, 8, a);
  auto y = class_based_batches(labels, 8, b);
  ASSERT_EQ(x.size(), y.size());
  std::multiset<std::size_t> seen;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].indices, y[i].indices);
    EXPECT_EQ(x[i].filler, y[i].filler);
    EXPECT_LE(x[i].indices.size(), 8u);
    for (std::size_t k = 0; k < x[i].indices.size(); ++k) {
      seen.insert(x[i].indices[k]);
      if (!x[i].filler[k]) {
        EXPECT_EQ(labels[x[i].indices[k]], x[i].class_id);
      }
    }
  }
  EXPECT_EQ(seen.size(), labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_EQ(seen.count(i), 1u);
}

TEST(ClassBatches, Errors) {
  Rng rng(1);
  std::vector<std::int64_t> none;
  EXPECT_THROW(class_based_batches(none, 4, rng), DomainError);
  std::vector<std::int64_t> some{1, 2};
  EXPECT_THROW(class_based_batches(some, 1, rng), DomainError);
}

}  // namespace
}  // namespace mmr::losses
