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
#include <set>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/losses/losses.h"
#include "mmr/numcore/gradcheck.h"
#include "mmr/towers/model.h"

namespace mmr::towers {
namespace {

using losses::FusionVariant;
using nc::Tensor;

GrayImage random_image(Rng& rng, std::size_t size = 16) {
  GrayImage img = GrayImage::blank(size, size);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

TitleTokens random_title(Rng& rng, const TowerConfig& cfg, std::size_t len) {
  TitleTokens t;
  for (std::size_t i = 0; i < len; ++i) {
    t.ids.push_back(kFirstWordId + static_cast<std::uint32_t>(rng.below(cfg.vocab_size - kFirstWordId)));
  }
  return t;
}

ItemInput random_item(Rng& rng, const TowerConfig& cfg, std::size_t n_images) {
  std::vector<GrayImage> imgs;
  for (std::size_t i = 0; i < n_images; ++i) imgs.push_back(random_image(rng, cfg.image_size));
  return make_item_input(random_title(rng, cfg, 1 + rng.below(cfg.max_title_len)), imgs, 0, cfg);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

double row_norm(const Tensor& t, std::size_t r) {
  double s = 0;
  for (std::size_t c = 0; c < t.cols(); ++c) s += t.at(r, c) * t.at(r, c);
  return std::sqrt(s);
}

TowerConfig small_config() {
  TowerConfig c;
  c.token_dim = 16;
  c.heads = 2;
  c.ffn_dim = 32;
  c.output_dim = 16;
  c.vocab_size = 64;
  c.max_title_len = 6;
  c.k_images = 2;
  return c;
}

TEST(TowerConfig, Validation) {
  TowerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.patch_size = 5;
  EXPECT_THROW(c.validate(), DomainError);
  c = TowerConfig{};
  c.heads = 3;
  EXPECT_THROW(c.validate(), DomainError);
  c = TowerConfig{};
  c.k_images = 0;
  EXPECT_THROW(c.validate(), DomainError);
  EXPECT_EQ(TowerConfig{}.patches_per_image(), 16u);
}

TEST(Tokenizer, WordsHashIntoVocabulary) {
  TowerConfig c;
  auto a = tokenize_title("Sepatu Pria Casual", c);
  auto b = tokenize_title("sepatu  PRIA, casual!", c);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.ids.size(), 3u);
  for (auto id : a.ids) {
    EXPECT_GE(id, kFirstWordId);
    EXPECT_LT(id, c.vocab_size);
  }
  EXPECT_TRUE(tokenize_title("?! .", c).ids.empty());
  EXPECT_EQ(tokenize_title("a b c d e f g h i j k l m n o p q r s", c).ids.size(), c.max_title_len);
}

TEST(PadOrTruncate, Examples) {
  Rng rng(1);
  std::vector<GrayImage> six;
  for (int i = 0; i < 6; ++i) six.push_back(random_image(rng));

  auto two = pad_or_truncate(std::span(six).first(2), 4, 16);
  ASSERT_EQ(two.images.size(), 4u);
  EXPECT_EQ(two.images[0], six[0]);
  EXPECT_EQ(two.images[1], six[1]);
  EXPECT_EQ(two.images[2], GrayImage::blank(16, 16));
  EXPECT_EQ(two.mask.valid, (std::vector<bool>{true, true, false, false}));

  auto trunc = pad_or_truncate(six, 4, 16);
  ASSERT_EQ(trunc.images.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(trunc.images[i], six[i]);
  EXPECT_EQ(trunc.mask.valid_count(), 4u);

  auto four = pad_or_truncate(std::span(six).first(4), 4, 16);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(four.images[i], six[i]);
  EXPECT_EQ(four.mask.valid_count(), 4u);

  EXPECT_THROW(pad_or_truncate(six, 0, 16), DomainError);
}

TEST(ImageEncoder, Contracts) {
  TowerModel m(TowerConfig{}, 3);
  Rng rng(2);
  auto img = random_image(rng);
  auto copy = img;
  EXPECT_EQ(m.query_embedding(img), m.query_embedding(copy));

  auto blank = m.query_embedding(GrayImage::blank(16, 16));
  for (float v : blank) EXPECT_TRUE(std::isfinite(v));

  std::vector<GrayImage> batch{img, random_image(rng), GrayImage::blank(16, 16)};
  auto e = m.query_embeddings(batch);
  ASSERT_EQ(e.rows(), 3u);
  ASSERT_EQ(e.cols(), 32u);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_NEAR(row_norm(e, r), 1.0, 1e-6);

  EXPECT_THROW(m.query_embedding(GrayImage::blank(12, 12)), ShapeError);
  EXPECT_EQ(m.image_tokens(img).shape(), (nc::Shape{16, 32}));
}

TEST(ImageEncoder, BatchedEqualsSingle) {
  TowerModel m(TowerConfig{}, 4);
  Rng rng(3);
  std::vector<GrayImage> batch{random_image(rng), random_image(rng), random_image(rng)};
  auto stacked = m.query_embeddings(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto one = m.query_embedding(batch[i]);
    for (std::size_t c = 0; c < one.size(); ++c) {
      EXPECT_EQ(one[c], static_cast<float>(stacked.at(i, c)));
    }
  }
}

TEST(ImageEncoder, LocallyLipschitz) {
  TowerModel m(TowerConfig{}, 5);
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    auto img = random_image(rng);
    auto base = m.query_embedding(img);
    img.pixels[rng.below(img.pixels.size())] += 1e-6;
    auto moved = m.query_embedding(img);
    double d = 0;
    for (std::size_t i = 0; i < base.size(); ++i) d += (base[i] - moved[i]) * (base[i] - moved[i]);
    EXPECT_LT(std::sqrt(d), 1e-3);
  }
}

TEST(TitleEncoder, Contracts) {
  TowerConfig c;
  TowerModel m(c, 6);
  Rng rng(5);
  auto t = random_title(rng, c, 6);
  auto a = m.encode_title(t), b = m.encode_title(t);
  EXPECT_EQ(a.shape(), (nc::Shape{7, 32}));
  EXPECT_EQ(max_abs_diff(a, b), 0.0);

  auto permuted = t;
  std::swap(permuted.ids[0], permuted.ids[3]);
  auto p = m.encode_title(permuted);
  double cls_diff = 0;
  for (std::size_t i = 0; i < 32; ++i) cls_diff = std::max(cls_diff, std::abs(a.at(0, i) - p.at(0, i)));
  EXPECT_GT(cls_diff, 1e-6);

  TitleTokens bad{{static_cast<std::uint32_t>(c.vocab_size)}};
  EXPECT_THROW(m.encode_title(bad), DomainError);
  TitleTokens too_long;
  too_long.ids.assign(c.max_title_len + 1, kFirstWordId);
  EXPECT_THROW(m.encode_title(too_long), DomainError);
}

TEST(TitleEncoder, MaskedTitleClsEqualsBareCls) {
  TowerModel m(TowerConfig{}, 7);
  Rng rng(6);
  auto masked = m.encode_title(random_title(rng, m.config(), 9), true);
  auto bare = m.encode_title(TitleTokens{});
  ASSERT_EQ(bare.rows(), 1u);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(masked.at(0, i), bare.at(0, i));
    EXPECT_TRUE(std::isfinite(bare.at(0, i)));
  }
}

TEST(Towers, ImageEncoderIsShared) {
  TowerModel m(TowerConfig{}, 8);
  EXPECT_EQ(m.query_tower().image_encoder.get(), m.item_tower().image_encoder.get());
  EXPECT_EQ(m.query_tower().image_projection.get(), m.item_tower().image_projection.get());
  EXPECT_EQ(m.query_tower().image_encoder->patch_w.id(), m.item_tower().image_encoder->patch_w.id());

  // One set of weights: each parameter appears exactly once.
  std::set<const void*> ids;
  for (const auto& t : m.parameters()) EXPECT_TRUE(ids.insert(t.id()).second);
}

TEST(Towers, ItemEmbeddingContracts) {
  TowerModel m(TowerConfig{}, 9);
  Rng rng(7);
  auto item = random_item(rng, m.config(), 3);
  auto dup = item;
  EXPECT_EQ(m.item_embedding(item), m.item_embedding(dup));

  auto e = m.item_embedding(item);
  double n = 0;
  for (float v : e) n += double(v) * v;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);

  auto title_only = make_item_input(item.title, {}, 0, m.config());
  EXPECT_EQ(title_only.images.mask.valid_count(), 0u);
  auto t = m.item_embedding(title_only);
  n = 0;
  for (float v : t) {
    EXPECT_TRUE(std::isfinite(v));
    n += double(v) * v;
  }
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-6);
}

TEST(Towers, AllEmptyImagesEqualsDefaultImageVariant) {
  TowerModel m(TowerConfig{}, 10);
  Rng rng(8);
  auto item = random_item(rng, m.config(), 4);
  auto empty = make_item_input(item.title, {}, 0, m.config());
  std::vector<ItemInput> a{item}, b{empty};
  auto def = m.item_embeddings(a, FusionVariant::kDefaultImage);
  auto full_empty = m.item_embeddings(b, FusionVariant::kFull);
  EXPECT_LT(max_abs_diff(def, full_empty), 1e-12);
}

TEST(Towers, PaddedSlotContentIsIgnored) {
  TowerModel m(TowerConfig{}, 11);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto item = random_item(rng, m.config(), 1 + rng.below(3));
    auto noisy = item;
    for (std::size_t s = 0; s < noisy.images.images.size(); ++s) {
      if (!noisy.images.mask.valid[s]) noisy.images.images[s] = random_image(rng);
    }
    for (auto path : {FusionPath::kCompact, FusionPath::kMasked}) {
      std::vector<ItemInput> a{item}, b{noisy};
      EXPECT_LT(max_abs_diff(m.item_embeddings(a, FusionVariant::kFull, path),
                             m.item_embeddings(b, FusionVariant::kFull, path)),
                1e-6);
    }
  }
}

TEST(Towers, SingleImageGenericPathMatchesOneSlot) {
  TowerModel m(TowerConfig{}, 12);
  Rng rng(10);
  for (int trial = 0; trial < 5; ++trial) {
    auto img = random_image(rng);
    auto title = random_title(rng, m.config(), 5);
    ItemInput one{title, pad_or_truncate(std::span(&img, 1), 1, 16), 0};
    ItemInput generic{title, pad_or_truncate(std::span(&img, 1), 4, 16), 0};
    std::vector<ItemInput> a{one}, b{generic};
    for (auto v : {FusionVariant::kFull, FusionVariant::kDefaultImage, FusionVariant::kDefaultTitle}) {
      for (auto path : {FusionPath::kCompact, FusionPath::kMasked}) {
        EXPECT_EQ(max_abs_diff(m.item_embeddings(a, v, path), m.item_embeddings(b, v, path)), 0.0);
      }
    }
  }
}

TEST(Towers, CompactAndMaskedPathsAgree) {
  TowerModel m(TowerConfig{}, 13);
  Rng rng(11);
  std::vector<ItemInput> items;
  for (int i = 0; i < 6; ++i) items.push_back(random_item(rng, m.config(), 1 + rng.below(6)));
  for (auto v : {FusionVariant::kFull, FusionVariant::kDefaultImage, FusionVariant::kDefaultTitle}) {
    auto a = m.item_embeddings(items, v, FusionPath::kCompact);
    auto b = m.item_embeddings(items, v, FusionPath::kMasked);
    EXPECT_LT(max_abs_diff(a, b), 1e-12);
    for (std::size_t r = 0; r < a.rows(); ++r) EXPECT_NEAR(row_norm(a, r), 1.0, 1e-6);
  }
}

TEST(Towers, BatchedItemsEqualSingle) {
  TowerModel m(TowerConfig{}, 14);
  Rng rng(12);
  std::vector<ItemInput> items;
  for (int i = 0; i < 4; ++i) items.push_back(random_item(rng, m.config(), 1 + rng.below(4)));
  auto stacked = m.item_embeddings(items);
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto one = m.item_embedding(items[i]);
    for (std::size_t c = 0; c < one.size(); ++c) EXPECT_EQ(one[c], static_cast<float>(stacked.at(i, c)));
  }
}

// Slot embeddings make the fused output depend on image order.
TEST(Towers, ImageOrderSensitive) {
  TowerModel m(TowerConfig{}, 15);
  Rng rng(13);
  auto item = random_item(rng, m.config(), 3);
  auto swapped = item;
  std::swap(swapped.images.images[0], swapped.images.images[2]);
  auto a = m.item_embedding(item), b = m.item_embedding(swapped);
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, double(std::abs(a[i] - b[i])));
  EXPECT_GT(d, 1e-6);
}

TEST(Towers, InferenceRecordsNoGraph) {
  TowerModel m(TowerConfig{}, 16);
  Rng rng(14);
  auto img = random_image(rng);
  {
    nc::NoGradGuard guard;
    std::vector<GrayImage> batch{img};
    EXPECT_FALSE(m.query_embeddings(batch).requires_grad());
  }
  std::vector<GrayImage> batch{img};
  EXPECT_TRUE(m.query_embeddings(batch).requires_grad());
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TowerConfig c = small_config();
  TowerModel m(c, 17);
  m.set_trained_stage(2);
  const std::string bytes = serialize_checkpoint(m);
  TowerModel back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.config(), c);
  EXPECT_EQ(back.trained_stage(), 2);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  auto a = m.named_parameters(), b = back.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_TRUE(std::equal(a[i].second.data().begin(), a[i].second.data().end(),
                           b[i].second.data().begin()));
  }
  EXPECT_EQ(back.query_tower().image_encoder.get(), back.item_tower().image_encoder.get());
}

TEST(Checkpoint, RejectsMalformed) {
  TowerModel m(small_config(), 18);
  const std::string bytes = serialize_checkpoint(m);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_checkpoint("XXXX" + bytes.substr(4)), FormatError);
  EXPECT_THROW(deserialize_checkpoint(bytes + "z"), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad_version), FormatError);
  EXPECT_THROW(deserialize_checkpoint(""), FormatError);
}

TEST(Checkpoint, CloneIsIndependent) {
  TowerModel m(small_config(), 19);
  TowerModel c = m.clone();
  c.named_parameters()[0].second.mutable_data()[0] += 1.0;
  EXPECT_NE(m.named_parameters()[0].second.data()[0], c.named_parameters()[0].second.data()[0]);
}

TEST(Towers, DifferentSeedsDifferentWeights) {
  TowerModel a(small_config(), 1), b(small_config(), 1), c(small_config(), 2);
  EXPECT_EQ(serialize_checkpoint(a), serialize_checkpoint(b));
  EXPECT_NE(serialize_checkpoint(a), serialize_checkpoint(c));
}

TEST(Towers, FinalLossGradientThroughFullStack) {
  TowerConfig c = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    TowerModel m(c, seed);
    Rng rng(100 + seed);
    std::vector<GrayImage> queries;
    std::vector<ItemInput> items;
    for (int i = 0; i < 3; ++i) {
      queries.push_back(random_image(rng));
      items.push_back(random_item(rng, c, 1 + rng.below(3)));
    }
    std::vector<std::int64_t> ids{0, 1, 2};
    losses::XbmBuffer memory(16);
    {
      nc::NoGradGuard guard;
      memory.push(m.item_embeddings(items), ids, losses::Side::kFusion);
    }
    losses::LossConfig lc;
    lc.gamma = 5.0;
    auto f = [&] {
      auto parts = m.encode_item_parts(items);
      losses::XbmBuffer snapshot = memory;
      return losses::final_loss(
          m.query_embeddings(queries), [&](FusionVariant v) { return m.fuse(parts, v); }, snapshot,
          ids, lc);
    };
    auto r = nc::grad_check_params(f, m.parameters(), 1e-5, 60, seed);
    EXPECT_LT(r.max_relative_error, 1e-4) << "analytic " << r.worst_analytic << " numeric "
                                          << r.worst_numeric;
  }
}

}  // namespace
}  // namespace mmr::towers
