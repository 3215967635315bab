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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

#include "mmr/common/errors.h"
#include "mmr/trainer/adamw.h"
#include "mmr/trainer/synthetic.h"
#include "mmr/trainer/trainer.h"

namespace mmr::trainer {
namespace {

using nc::Tensor;

SyntheticCatalogSpec tiny_spec(std::uint64_t seed = 3) {
  SyntheticCatalogSpec s;
  s.classes = 6;
  s.items_per_class = 4;
  s.max_images = 3;
  s.vocab_size = 120;
  s.eval_queries = 10;
  s.seed = seed;
  return s;
}

towers::TowerConfig tiny_model() {
  towers::TowerConfig c;
  c.token_dim = 16;
  c.heads = 2;
  c.ffn_dim = 32;
  c.fusion_layers = 1;
  c.output_dim = 16;
  c.vocab_size = 128;
  c.max_title_len = 8;
  return c;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mmr_trainer_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TEST(Synthetic, IdenticalQueriesAreCatalogImages) {
  SyntheticCatalogSpec s = tiny_spec();
  s.classes = 2;
  s.items_per_class = 2;
  s.identical_share = 1.0;
  s.similar_share = 0.0;
  s.noise_share = 0.0;
  s.duplicate_fraction = 0.0;
  const auto corpus = generate_synthetic_logs(s);
  ASSERT_EQ(corpus.catalog.size(), 4u);
  ASSERT_EQ(corpus.logs.size(), 4u);
  for (const auto& log : corpus.logs) {
    EXPECT_EQ(log.relation, Relation::kIdentical);
    EXPECT_NE(std::find(log.clicked_images.begin(), log.clicked_images.end(), log.query_image),
              log.clicked_images.end());
  }
}

TEST(Synthetic, RelationMixMatchesShares) {
  SyntheticCatalogSpec s = tiny_spec();
  s.classes = 100;
  s.items_per_class = 10;
  s.max_images = 1;
  s.duplicate_fraction = 0.0;
  const auto corpus = generate_synthetic_logs(s);
  ASSERT_EQ(corpus.logs.size(), 1000u);
  std::map<Relation, double> counts;
  for (const auto& log : corpus.logs) counts[log.relation] += 1.0;
  EXPECT_NEAR(counts[Relation::kIdentical] / 1000.0, 0.45, 0.03);
  EXPECT_NEAR(counts[Relation::kSimilar] / 1000.0, 0.50, 0.03);
  EXPECT_NEAR(counts[Relation::kNoise] / 1000.0, 0.05, 0.03);
}

TEST(Synthetic, SimilarQueriesComeFromTheSameClass) {
  SyntheticCatalogSpec s = tiny_spec();
  s.identical_share = 0.0;
  s.similar_share = 1.0;
  s.noise_share = 0.0;
  const auto corpus = generate_synthetic_logs(s);
  std::map<std::int64_t, std::vector<const ProductRecord*>> by_class;
  for (const auto& p : corpus.catalog) by_class[p.category].push_back(&p);
  for (const auto& log : corpus.logs) {
    EXPECT_EQ(std::find(log.clicked_images.begin(), log.clicked_images.end(), log.query_image),
              log.clicked_images.end());
    bool found = false;
    for (const auto* p : by_class[log.class_id]) {
      const auto imgs = decode_images(*p);
      found |= std::find(imgs.begin(), imgs.end(), log.query_image) != imgs.end();
    }
    EXPECT_TRUE(found);
  }
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  const auto a = temp_dir("seed_a");
  const auto b = temp_dir("seed_b");
  save_corpus(generate_synthetic_logs(tiny_spec(9)), a.string());
  save_corpus(generate_synthetic_logs(tiny_spec(9)), b.string());
  for (const char* f : {"catalog.jsonl", "logs.jsonl", "eval_queries.jsonl", "latent_items.json"}) {
    std::ifstream fa(a / f, std::ios::binary), fb(b / f, std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(fa)), {});
    const std::string sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_FALSE(sa.empty()) << f;
    EXPECT_EQ(sa, sb) << f;
  }
  const auto other = generate_synthetic_logs(tiny_spec(10));
  const auto first = generate_synthetic_logs(tiny_spec(9));
  EXPECT_NE(other.catalog[0].images, first.catalog[0].images);
}

TEST(Synthetic, SaveLoadRoundTrip) {
  const auto dir = temp_dir("roundtrip");
  const auto corpus = generate_synthetic_logs(tiny_spec());
  save_corpus(corpus, dir.string());
  const auto back = load_corpus(dir.string());
  ASSERT_EQ(back.catalog.size(), corpus.catalog.size());
  ASSERT_EQ(back.logs.size(), corpus.logs.size());
  ASSERT_EQ(back.eval_queries.size(), corpus.eval_queries.size());
  EXPECT_EQ(back.latent_item, corpus.latent_item);
  for (std::size_t i = 0; i < corpus.logs.size(); ++i) {
    EXPECT_EQ(back.logs[i].product_id, corpus.logs[i].product_id);
    EXPECT_EQ(back.logs[i].relation, corpus.logs[i].relation);
    EXPECT_EQ(back.logs[i].query_image, corpus.logs[i].query_image);
    EXPECT_EQ(back.logs[i].clicked_images, corpus.logs[i].clicked_images);
    EXPECT_EQ(back.logs[i].class_id, corpus.logs[i].class_id);
  }
  for (std::size_t i = 0; i < corpus.eval_queries.size(); ++i) {
    EXPECT_EQ(back.eval_queries[i].image, corpus.eval_queries[i].image);
    EXPECT_EQ(back.eval_queries[i].truth, corpus.eval_queries[i].truth);
  }
}

TEST(Synthetic, DuplicatesShareLatentItem) {
  SyntheticCatalogSpec s = tiny_spec();
  s.duplicate_fraction = 0.25;
  const auto corpus = generate_synthetic_logs(s);
  EXPECT_EQ(corpus.catalog.size(), 30u);
  std::map<std::int64_t, int> per_item;
  for (const auto& [id, item] : corpus.latent_item) ++per_item[item];
  EXPECT_EQ(per_item.size(), 24u);
  for (const auto& q : corpus.eval_queries) {
    ASSERT_FALSE(q.truth.empty());
    const auto item = corpus.latent_item.at(q.truth[0]);
    EXPECT_EQ(static_cast<int>(q.truth.size()), per_item[item]);
  }
}

TEST(Synthetic, InvalidSpecRejected) {
  SyntheticCatalogSpec s = tiny_spec();
  s.noise_share = 0.2;
  EXPECT_THROW(s.validate(), DomainError);
  s = tiny_spec();
  s.classes = 0;
  EXPECT_THROW(s.validate(), DomainError);
}

TEST(AdamW, ZeroGradientOnlyDecays) {
  std::vector<Tensor> params{Tensor::from({3}, {1.0, -2.0, 0.5})};
  AdamWState state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  adamw_step(params, std::vector<std::vector<double>>{{0, 0, 0}}, state, cfg);
  EXPECT_EQ(std::vector<double>(params[0].data().begin(), params[0].data().end()),
            (std::vector<double>{1.0, -2.0, 0.5}));
  cfg.weight_decay = 0.1;
  cfg.lr = 0.01;
  adamw_step(params, std::vector<std::vector<double>>{{0, 0, 0}}, state, cfg);
  EXPECT_DOUBLE_EQ(params[0].data()[0], 1.0 * (1 - 0.001));
  EXPECT_DOUBLE_EQ(params[0].data()[1], -2.0 * (1 - 0.001));
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  std::vector<Tensor> params{Tensor::from({2}, {0.0, 0.0})};
  AdamWState state;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.05;
  adamw_step(params, std::vector<std::vector<double>>{{2.0, -3.0}}, state, cfg);
  EXPECT_NEAR(params[0].data()[0], -0.05, 1e-8);
  EXPECT_NEAR(params[0].data()[1], 0.05, 1e-8);
}

TEST(AdamW, QuadraticConverges) {
  std::vector<Tensor> params{Tensor::from({1}, {1.0})};
  AdamWState state;
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 100; ++i) {
    const double x = params[0].data()[0];
    adamw_step(params, std::vector<std::vector<double>>{{2.0 * (x - 0.3)}}, state, cfg);
  }
  constexpr double kScalarOracle = 0.3009393718311804;
  EXPECT_NEAR(params[0].data()[0], kScalarOracle, 1e-12);
  EXPECT_NEAR(params[0].data()[0], 0.3, 1e-3);
}

TEST(AdamW, NonFiniteGradientRejectedWithoutUpdate) {
  std::vector<Tensor> params{Tensor::from({2}, {1.0, 2.0}), Tensor::from({1}, {3.0})};
  AdamWState state;
  AdamWConfig cfg;
  EXPECT_THROW(adamw_step(params, std::vector<std::vector<double>>{{0.1, 0.1}, {std::nan("")}},
                          state, cfg),
               NumericError);
  EXPECT_EQ(params[0].data()[0], 1.0);
  EXPECT_EQ(params[1].data()[0], 3.0);
  EXPECT_THROW(adamw_step(params, std::vector<std::vector<double>>{{0.1}}, state, cfg), ShapeError);
}

TEST(Trainer, StageRequiresPrerequisite) {
  const auto corpus = generate_synthetic_logs(tiny_spec());
  towers::TowerModel model(tiny_model(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_stage(2, model, corpus.logs, cfg), StateError);
  EXPECT_THROW(train_stage(3, model, corpus.logs, cfg), StateError);
  cfg.k_images = 1;
  EXPECT_THROW(train_stage(3, model, corpus.logs, cfg), DomainError);
  cfg.k_images = 8;
  cfg.allow_missing_prerequisite = true;
  EXPECT_THROW(train_stage(3, model, corpus.logs, cfg), DomainError);
}

TEST(Trainer, StageOneReducesLoss) {
  auto spec = tiny_spec();
  spec.identical_share = 1.0;
  spec.similar_share = 0.0;
  spec.noise_share = 0.0;
  const auto corpus = generate_synthetic_logs(spec);
  towers::TowerModel model(tiny_model(), 2);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.optimizer.lr = 3e-3;
  const auto r = train_stage(1, model, corpus.logs, cfg);
  ASSERT_EQ(r.curve.size(), 50u * 3u);
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 3; ++i) head += r.curve[i].loss;
  for (std::size_t i = r.curve.size() - 3; i < r.curve.size(); ++i) tail += r.curve[i].loss;
  EXPECT_LT(tail, head);
  EXPECT_EQ(model.trained_stage(), 1);

  nc::NoGradGuard guard;
  std::vector<GrayImage> queries;
  std::vector<towers::TitleTokens> titles;
  for (const auto& log : corpus.logs) {
    queries.push_back(log.query_image);
    titles.push_back(towers::tokenize_title(log.clicked_title, model.config()));
  }
  const Tensor q = model.query_embeddings(queries);
  const Tensor t = model.title_embeddings(titles);
  const std::size_t n = queries.size(), d = q.shape()[1];
  double diag = 0, off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < d; ++k) dot += q.data()[i * d + k] * t.data()[j * d + k];
      (i == j ? diag : off) += dot;
    }
  }
  EXPECT_GT(diag / n, off / (n * (n - 1)));
}

TEST(Trainer, StageThreeEqualsStageTwoOnSingleImageData) {
  auto spec = tiny_spec();
  spec.min_images = 1;
  spec.max_images = 1;
  const auto corpus = generate_synthetic_logs(spec);
  towers::TowerModel base(tiny_model(), 4);
  base.set_trained_stage(2);
  auto a = base.clone();
  auto b = base.clone();
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto r2 = train_stage(2, a, corpus.logs, cfg);
  const auto r3 = train_stage(3, b, corpus.logs, cfg);
  ASSERT_EQ(r2.curve.size(), r3.curve.size());
  for (std::size_t i = 0; i < r2.curve.size(); ++i) {
    EXPECT_NEAR(r2.curve[i].loss, r3.curve[i].loss, 1e-9 * std::max(1.0, std::abs(r2.curve[i].loss)));
  }
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  double worst = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].second.size(); ++j) {
      worst = std::max(worst, std::abs(pa[i].second.data()[j] - pb[i].second.data()[j]));
    }
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(Trainer, DeterministicForSeed) {
  const auto corpus = generate_synthetic_logs(tiny_spec());
  towers::TowerModel a(tiny_model(), 5), b(tiny_model(), 5);
  TrainConfig cfg;
  cfg.epochs = 2;
  const auto ra = train_stage(1, a, corpus.logs, cfg);
  const auto rb = train_stage(1, b, corpus.logs, cfg);
  ASSERT_EQ(ra.curve.size(), rb.curve.size());
  for (std::size_t i = 0; i < ra.curve.size(); ++i) EXPECT_EQ(ra.curve[i].loss, rb.curve[i].loss);
  EXPECT_EQ(towers::serialize_checkpoint(a), towers::serialize_checkpoint(b));
}

TEST(Trainer, LossCurveCsv) {
  const std::vector<LossPoint> curve{{0, 1, 2.5}, {1, 1, 2.25}, {0, 2, 10.0}};
  EXPECT_EQ(loss_curve_csv(curve), "step,stage,loss\n0,1,2.5\n1,1,2.25\n0,2,10\n");
}

TEST(Trainer, DropNoiseSkipsNoiseLogs) {
  auto spec = tiny_spec();
  spec.identical_share = 0.0;
  spec.similar_share = 0.0;
  spec.noise_share = 1.0;
  const auto corpus = generate_synthetic_logs(spec);
  towers::TowerModel model(tiny_model(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.drop_noise = true;
  EXPECT_THROW(train_stage(1, model, corpus.logs, cfg), DomainError);
}

}  // namespace
}  // namespace mmr::trainer
