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

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mmr/common/image.h"
#include "mmr/losses/losses.h"
#include "mmr/numcore/ops.h"
#include "mmr/numcore/tensor.h"

namespace mmr::towers {

inline constexpr std::uint32_t kPadId = 0;
inline constexpr std::uint32_t kUnkId = 1;
inline constexpr std::uint32_t kClsId = 2;
inline constexpr std::uint32_t kFirstWordId = 3;

// Desk-scale defaults. The production model used 6 fusion layers and a
// 128-d output; both are plain config values here.
struct TowerConfig {
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t token_dim = 32;
  std::size_t heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t image_layers = 1;
  std::size_t title_layers = 1;
  std::size_t fusion_layers = 2;
  std::size_t output_dim = 32;
  std::size_t max_title_len = 16;
  std::size_t vocab_size = 1024;
  std::size_t k_images = 4;

  std::size_t patches_per_image() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  std::size_t patch_area() const { return patch_size * patch_size; }

  // Throws DomainError on inconsistent sizes.
  void validate() const;
  bool operator==(const TowerConfig&) const = default;
};

// Token ids without the CLS prefix; the encoder adds it.
struct TitleTokens {
  std::vector<std::uint32_t> ids;
  bool operator==(const TitleTokens&) const = default;
};

// Lowercases, splits on non-alphanumeric bytes and hashes each word into
// [kFirstWordId, vocab). Keeps at most max_title_len words.
TitleTokens tokenize_title(std::string_view title, const TowerConfig& cfg);

struct ImageSlots {
  std::vector<GrayImage> images;  // exactly K
  nc::AttentionMask mask;         // false for padded slots
};

// Keeps the first K images; pads with blank images flagged invalid.
ImageSlots pad_or_truncate(std::span<const GrayImage> images, std::size_t k,
                           std::size_t image_size);

struct ItemInput {
  TitleTokens title;
  ImageSlots images;
  std::int64_t class_id = 0;
};

ItemInput make_item_input(const TitleTokens& title, std::span<const GrayImage> images,
                          std::int64_t class_id, const TowerConfig& cfg);

// Row-major [patches, patch_area] pixel matrix of one image.
std::vector<double> patchify(const GrayImage& image, const TowerConfig& cfg);

struct BlockParams {
  nc::Tensor ln1_gain, ln1_shift;
  nc::AttentionParams attn;
  nc::Tensor ln2_gain, ln2_shift;
  nc::Tensor ff1_w, ff1_b, ff2_w, ff2_b;
};

struct ImageEncoder {
  nc::Tensor patch_w, patch_b, position;
  std::vector<BlockParams> blocks;
  nc::Tensor ln_gain, ln_shift;
};

struct TitleEncoder {
  nc::Tensor token_table, position;
  std::vector<BlockParams> blocks;
  nc::Tensor ln_gain, ln_shift;
};

struct FusionModule {
  nc::Tensor text_type, slot_embedding;
  std::vector<BlockParams> blocks;
  nc::Tensor ln_gain, ln_shift;
};

struct Projection {
  nc::Tensor w, b;
};

// The query tower and the item tower hold the same ImageEncoder and image
// projection objects.
struct QueryTower {
  std::shared_ptr<ImageEncoder> image_encoder;
  std::shared_ptr<Projection> image_projection;
};

struct ItemTower {
  std::shared_ptr<ImageEncoder> image_encoder;
  std::shared_ptr<Projection> image_projection;
  std::shared_ptr<TitleEncoder> title_encoder;
  std::shared_ptr<FusionModule> fusion;
  std::shared_ptr<Projection> title_projection;
  std::shared_ptr<Projection> fusion_projection;
};

// How padded and default-masked positions reach the fusion blocks. kCompact
// drops masked positions before attention; kMasked keeps them in the
// sequence behind an attention mask. Both give the same result.
enum class FusionPath { kCompact, kMasked };

// Encoded pieces of a batch of items, reusable across fusion variants.
// Under kCompact padded slots are never encoded and their tensors stay
// undefined; the default title is the bare CLS position. Under kMasked the
// default title keeps every word position behind an all-invalid mask.
struct ItemParts {
  FusionPath path = FusionPath::kCompact;
  std::vector<nc::Tensor> title_tokens;          // per item [1 + L, d]
  std::vector<nc::Tensor> default_title_tokens;  // per item
  std::vector<std::vector<nc::Tensor>> slot_tokens;  // per item, per slot [P, d]
  std::vector<nc::AttentionMask> slot_masks;
};

class TowerModel {
 public:
  explicit TowerModel(const TowerConfig& cfg, std::uint64_t seed = 0);

  // Copies share weights with the source; clone() makes independent ones.
  TowerModel clone() const;

  const TowerConfig& config() const { return cfg_; }
  const QueryTower& query_tower() const { return query_; }
  const ItemTower& item_tower() const { return item_; }

  // Highest curriculum stage completed on these weights (0 = untrained).
  int trained_stage() const { return trained_stage_; }
  void set_trained_stage(int stage) { trained_stage_ = stage; }

  // Fixed order; names are stable across builds and used by checkpoints.
  std::vector<std::pair<std::string, nc::Tensor>> named_parameters() const;
  std::vector<nc::Tensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // Patch token sequence [P, d] of one image.
  nc::Tensor image_tokens(const GrayImage& image) const;
  // Unit-norm pooled embeddings [n, out] through the image projection.
  nc::Tensor query_embeddings(std::span<const GrayImage> images) const;
  // Unit-norm [n, out] CLS embeddings through the title projection.
  nc::Tensor title_embeddings(std::span<const TitleTokens> titles) const;

  // Encoder outputs [1 + L, d]; CLS first. With `masked`, every word
  // position is invalid and CLS attends only to itself.
  nc::Tensor encode_title(const TitleTokens& title, bool masked = false) const;

  ItemParts encode_item_parts(std::span<const ItemInput> items,
                              FusionPath path = FusionPath::kCompact) const;
  // Unit-norm fused embeddings [n, out] for one variant.
  nc::Tensor fuse(const ItemParts& parts, losses::FusionVariant variant) const;
  nc::Tensor item_embeddings(std::span<const ItemInput> items,
                             losses::FusionVariant variant = losses::FusionVariant::kFull,
                             FusionPath path = FusionPath::kCompact) const;

  // Inference helpers: no graph is recorded.
  std::vector<float> query_embedding(const GrayImage& image) const;
  std::vector<float> item_embedding(const ItemInput& item) const;

 private:
  // Encoder outputs for several images, stacked [n * P, d].
  nc::Tensor encode_images(std::span<const GrayImage* const> images) const;
  // Title encoder over several sequences, stacked; lengths are 1 + L each.
  nc::Tensor encode_titles(std::span<const TitleTokens* const> titles,
                           const std::vector<bool>& masked,
                           std::vector<std::size_t>* lengths) const;
  nc::Tensor run_blocks(const std::vector<BlockParams>& blocks, nc::Tensor x,
                        const std::vector<std::size_t>& lengths,
                        const std::vector<nc::AttentionMask>& masks) const;

  TowerConfig cfg_;
  QueryTower query_;
  ItemTower item_;
  int trained_stage_ = 0;
};

// Versioned binary checkpoint: header dims then named arrays in
// named_parameters() order. Throws FormatError on malformed input.
std::string serialize_checkpoint(const TowerModel& model);
TowerModel deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const TowerModel& model, const std::string& path);
TowerModel load_checkpoint(const std::string& path);

}  // namespace mmr::towers
