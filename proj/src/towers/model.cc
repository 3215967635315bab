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

#include "mmr/towers/model.h"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"
#include "mmr/common/rng.h"

namespace mmr::towers {
namespace {

using nc::Tensor;

Tensor gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = rng.normal() * stddev;
  return Tensor::from({rows, cols}, std::move(v), true);
}

Tensor weight(Rng& rng, std::size_t in, std::size_t out) {
  return gaussian(rng, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
}

Tensor bias(std::size_t n) { return Tensor::zeros({1, n}, true); }
Tensor ones(std::size_t n) { return Tensor::full({1, n}, 1.0, true); }

BlockParams make_block(Rng& rng, const TowerConfig& cfg) {
  const std::size_t d = cfg.token_dim, f = cfg.ffn_dim;
  BlockParams b;
  b.ln1_gain = ones(d);
  b.ln1_shift = bias(d);
  b.attn.wq = weight(rng, d, d);
  b.attn.bq = bias(d);
  b.attn.wk = weight(rng, d, d);
  b.attn.wv = weight(rng, d, d);
  b.attn.bv = bias(d);
  b.attn.wo = weight(rng, d, d);
  b.attn.bo = bias(d);
  b.ln2_gain = ones(d);
  b.ln2_shift = bias(d);
  b.ff1_w = weight(rng, d, f);
  b.ff1_b = bias(f);
  b.ff2_w = weight(rng, f, d);
  b.ff2_b = bias(d);
  return b;
}

std::vector<BlockParams> make_blocks(Rng& rng, const TowerConfig& cfg, std::size_t n) {
  std::vector<BlockParams> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_block(rng, cfg));
  return out;
}

Projection make_projection(Rng& rng, std::size_t in, std::size_t out) {
  return Projection{weight(rng, in, out), bias(out)};
}

using Named = std::vector<std::pair<std::string, Tensor>>;

void add_block(Named& out, const std::string& prefix, const BlockParams& b) {
  out.emplace_back(prefix + ".ln1.gain", b.ln1_gain);
  out.emplace_back(prefix + ".ln1.shift", b.ln1_shift);
  out.emplace_back(prefix + ".attn.wq", b.attn.wq);
  out.emplace_back(prefix + ".attn.bq", b.attn.bq);
  out.emplace_back(prefix + ".attn.wk", b.attn.wk);
  out.emplace_back(prefix + ".attn.wv", b.attn.wv);
  out.emplace_back(prefix + ".attn.bv", b.attn.bv);
  out.emplace_back(prefix + ".attn.wo", b.attn.wo);
  out.emplace_back(prefix + ".attn.bo", b.attn.bo);
  out.emplace_back(prefix + ".ln2.gain", b.ln2_gain);
  out.emplace_back(prefix + ".ln2.shift", b.ln2_shift);
  out.emplace_back(prefix + ".ff1.w", b.ff1_w);
  out.emplace_back(prefix + ".ff1.b", b.ff1_b);
  out.emplace_back(prefix + ".ff2.w", b.ff2_w);
  out.emplace_back(prefix + ".ff2.b", b.ff2_b);
}

std::vector<float> to_float_row(const Tensor& t) {
  return std::vector<float>(t.data().begin(), t.data().end());
}

}  // namespace

void TowerConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw DomainError("TowerConfig: image_size must be a positive multiple of patch_size");
  }
  if (token_dim == 0 || heads == 0 || token_dim % heads != 0) {
    throw DomainError("TowerConfig: token_dim must be divisible by heads");
  }
  if (ffn_dim == 0 || output_dim == 0) throw DomainError("TowerConfig: zero width");
  if (fusion_layers == 0) throw DomainError("TowerConfig: fusion_layers must be >= 1");
  if (k_images == 0) throw DomainError("TowerConfig: k_images must be >= 1");
  if (vocab_size <= kFirstWordId) throw DomainError("TowerConfig: vocab too small");
}

TitleTokens tokenize_title(std::string_view title, const TowerConfig& cfg) {
  TitleTokens out;
  const std::size_t span = cfg.vocab_size - kFirstWordId;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (out.ids.size() < cfg.max_title_len) {
      Fnv1a64 h;
      h.update(word);
      out.ids.push_back(kFirstWordId + static_cast<std::uint32_t>(h.digest() % span));
    }
    word.clear();
  };
  for (unsigned char c : title) {
    if (std::isalnum(c) || c >= 0x80) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

ImageSlots pad_or_truncate(std::span<const GrayImage> images, std::size_t k,
                           std::size_t image_size) {
  if (k == 0) throw DomainError("pad_or_truncate: K must be >= 1");
  ImageSlots out;
  for (std::size_t i = 0; i < k; ++i) {
    if (i < images.size()) {
      out.images.push_back(images[i]);
      out.mask.valid.push_back(true);
    } else {
      out.images.push_back(GrayImage::blank(image_size, image_size));
      out.mask.valid.push_back(false);
    }
  }
  return out;
}

ItemInput make_item_input(const TitleTokens& title, std::span<const GrayImage> images,
                          std::int64_t class_id, const TowerConfig& cfg) {
  return ItemInput{title, pad_or_truncate(images, cfg.k_images, cfg.image_size), class_id};
}

std::vector<double> patchify(const GrayImage& image, const TowerConfig& cfg) {
  if (image.width != cfg.image_size || image.height != cfg.image_size ||
      image.pixels.size() != image.width * image.height) {
    throw ShapeError("patchify: expected " + std::to_string(cfg.image_size) + "x" +
                     std::to_string(cfg.image_size) + " image, got " +
                     std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const std::size_t p = cfg.patch_size, per_row = cfg.image_size / p;
  std::vector<double> out;
  out.reserve(cfg.patches_per_image() * cfg.patch_area());
  for (std::size_t pr = 0; pr < per_row; ++pr) {
    for (std::size_t pc = 0; pc < per_row; ++pc) {
      for (std::size_t r = 0; r < p; ++r) {
        for (std::size_t c = 0; c < p; ++c) out.push_back(image.at(pr * p + r, pc * p + c));
      }
    }
  }
  return out;
}

TowerModel::TowerModel(const TowerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg.token_dim;

  auto image = std::make_shared<ImageEncoder>();
  image->patch_w = weight(rng, cfg.patch_area(), d);
  image->patch_b = bias(d);
  image->position = gaussian(rng, cfg.patches_per_image(), d, 0.1);
  image->blocks = make_blocks(rng, cfg, cfg.image_layers);
  image->ln_gain = ones(d);
  image->ln_shift = bias(d);

  auto title = std::make_shared<TitleEncoder>();
  title->token_table = gaussian(rng, cfg.vocab_size, d, 0.5);
  title->position = gaussian(rng, cfg.max_title_len + 1, d, 0.1);
  title->blocks = make_blocks(rng, cfg, cfg.title_layers);
  title->ln_gain = ones(d);
  title->ln_shift = bias(d);

  auto fusion = std::make_shared<FusionModule>();
  fusion->text_type = gaussian(rng, 1, d, 0.1);
  fusion->slot_embedding = gaussian(rng, cfg.k_images, d, 0.1);
  fusion->blocks = make_blocks(rng, cfg, cfg.fusion_layers);
  fusion->ln_gain = ones(d);
  fusion->ln_shift = bias(d);

  auto image_proj = std::make_shared<Projection>(make_projection(rng, d, cfg.output_dim));
  auto title_proj = std::make_shared<Projection>(make_projection(rng, d, cfg.output_dim));
  auto fusion_proj = std::make_shared<Projection>(make_projection(rng, d, cfg.output_dim));

  query_ = QueryTower{image, image_proj};
  item_ = ItemTower{image, image_proj, title, fusion, title_proj, fusion_proj};
}

TowerModel TowerModel::clone() const {
  return deserialize_checkpoint(serialize_checkpoint(*this));
}

std::vector<std::pair<std::string, Tensor>> TowerModel::named_parameters() const {
  Named out;
  const auto& img = *query_.image_encoder;
  out.emplace_back("image.patch.w", img.patch_w);
  out.emplace_back("image.patch.b", img.patch_b);
  out.emplace_back("image.position", img.position);
  for (std::size_t i = 0; i < img.blocks.size(); ++i) {
    add_block(out, "image.block" + std::to_string(i), img.blocks[i]);
  }
  out.emplace_back("image.ln.gain", img.ln_gain);
  out.emplace_back("image.ln.shift", img.ln_shift);

  const auto& title = *item_.title_encoder;
  out.emplace_back("title.tokens", title.token_table);
  out.emplace_back("title.position", title.position);
  for (std::size_t i = 0; i < title.blocks.size(); ++i) {
    add_block(out, "title.block" + std::to_string(i), title.blocks[i]);
  }
  out.emplace_back("title.ln.gain", title.ln_gain);
  out.emplace_back("title.ln.shift", title.ln_shift);

  const auto& fusion = *item_.fusion;
  out.emplace_back("fusion.text_type", fusion.text_type);
  out.emplace_back("fusion.slot", fusion.slot_embedding);
  for (std::size_t i = 0; i < fusion.blocks.size(); ++i) {
    add_block(out, "fusion.block" + std::to_string(i), fusion.blocks[i]);
  }
  out.emplace_back("fusion.ln.gain", fusion.ln_gain);
  out.emplace_back("fusion.ln.shift", fusion.ln_shift);

  out.emplace_back("proj.image.w", item_.image_projection->w);
  out.emplace_back("proj.image.b", item_.image_projection->b);
  out.emplace_back("proj.title.w", item_.title_projection->w);
  out.emplace_back("proj.title.b", item_.title_projection->b);
  out.emplace_back("proj.fusion.w", item_.fusion_projection->w);
  out.emplace_back("proj.fusion.b", item_.fusion_projection->b);
  return out;
}

std::vector<Tensor> TowerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t TowerModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += t.size();
  return n;
}

void TowerModel::zero_grad() {
  for (auto& t : parameters()) t.zero_grad();
}

Tensor TowerModel::run_blocks(const std::vector<BlockParams>& blocks, Tensor x,
                              const std::vector<std::size_t>& lengths,
                              const std::vector<nc::AttentionMask>& masks) const {
  for (const auto& b : blocks) {
    const Tensor h = nc::layer_norm(x, b.ln1_gain, b.ln1_shift);
    const Tensor q = nc::linear(h, b.attn.wq, b.attn.bq);
    const Tensor k = nc::matmul(h, b.attn.wk);
    const Tensor v = nc::linear(h, b.attn.wv, b.attn.bv);
    std::vector<Tensor> heads_out;
    heads_out.reserve(lengths.size());
    std::size_t offset = 0;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
      const std::size_t n = lengths[s];
      heads_out.push_back(nc::attention(nc::slice_rows(q, offset, n), nc::slice_rows(k, offset, n),
                                        nc::slice_rows(v, offset, n), cfg_.heads, masks[s]));
      offset += n;
    }
    const Tensor attended = heads_out.size() == 1 ? heads_out[0] : nc::concat_rows(heads_out);
    x = nc::add(x, nc::linear(attended, b.attn.wo, b.attn.bo));
    const Tensor h2 = nc::layer_norm(x, b.ln2_gain, b.ln2_shift);
    const Tensor ff = nc::linear(nc::gelu(nc::linear(h2, b.ff1_w, b.ff1_b)), b.ff2_w, b.ff2_b);
    x = nc::add(x, ff);
  }
  return x;
}

Tensor TowerModel::encode_images(std::span<const GrayImage* const> images) const {
  const auto& enc = *query_.image_encoder;
  const std::size_t p = cfg_.patches_per_image(), area = cfg_.patch_area();
  std::vector<double> pixels;
  pixels.reserve(images.size() * p * area);
  std::vector<std::size_t> positions;
  positions.reserve(images.size() * p);
  for (const GrayImage* img : images) {
    const auto patches = patchify(*img, cfg_);
    pixels.insert(pixels.end(), patches.begin(), patches.end());
    for (std::size_t i = 0; i < p; ++i) positions.push_back(i);
  }
  const Tensor raw = Tensor::from({images.size() * p, area}, std::move(pixels));
  Tensor x = nc::add(nc::linear(raw, enc.patch_w, enc.patch_b),
                     nc::gather_rows(enc.position, positions));
  const std::vector<std::size_t> lengths(images.size(), p);
  const std::vector<nc::AttentionMask> masks(images.size(), nc::AttentionMask::all_valid(p));
  x = run_blocks(enc.blocks, x, lengths, masks);
  return nc::layer_norm(x, enc.ln_gain, enc.ln_shift);
}

Tensor TowerModel::image_tokens(const GrayImage& image) const {
  const GrayImage* one[] = {&image};
  return encode_images(one);
}

Tensor TowerModel::query_embeddings(std::span<const GrayImage> images) const {
  if (images.empty()) throw DomainError("query_embeddings: no images");
  std::vector<const GrayImage*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  const Tensor tokens = encode_images(ptrs);
  const std::size_t p = cfg_.patches_per_image();
  std::vector<Tensor> pooled;
  pooled.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    pooled.push_back(nc::mean_rows(nc::slice_rows(tokens, i * p, p)));
  }
  const Tensor stacked = pooled.size() == 1 ? pooled[0] : nc::concat_rows(pooled);
  const auto& proj = *query_.image_projection;
  return nc::l2_normalize_rows(nc::linear(stacked, proj.w, proj.b));
}

Tensor TowerModel::encode_titles(std::span<const TitleTokens* const> titles,
                                 const std::vector<bool>& masked,
                                 std::vector<std::size_t>* lengths) const {
  const auto& enc = *item_.title_encoder;
  std::vector<std::size_t> ids, positions;
  std::vector<nc::AttentionMask> masks;
  lengths->clear();
  for (std::size_t t = 0; t < titles.size(); ++t) {
    const auto& title = *titles[t];
    if (title.ids.size() > cfg_.max_title_len) {
      throw DomainError("encode_title: title longer than max_title_len");
    }
    ids.push_back(kClsId);
    positions.push_back(0);
    nc::AttentionMask mask = nc::AttentionMask::all_valid(1);
    for (std::size_t i = 0; i < title.ids.size(); ++i) {
      if (title.ids[i] >= cfg_.vocab_size) {
        throw DomainError("encode_title: token id " + std::to_string(title.ids[i]) +
                          " outside vocabulary of " + std::to_string(cfg_.vocab_size));
      }
      ids.push_back(title.ids[i]);
      positions.push_back(i + 1);
      mask.valid.push_back(!masked[t]);
    }
    lengths->push_back(1 + title.ids.size());
    masks.push_back(std::move(mask));
  }
  Tensor x = nc::add(nc::gather_rows(enc.token_table, ids), nc::gather_rows(enc.position, positions));
  x = run_blocks(enc.blocks, x, *lengths, masks);
  return nc::layer_norm(x, enc.ln_gain, enc.ln_shift);
}

Tensor TowerModel::encode_title(const TitleTokens& title, bool masked) const {
  const TitleTokens* one[] = {&title};
  std::vector<std::size_t> lengths;
  return encode_titles(one, std::vector<bool>{masked}, &lengths);
}

Tensor TowerModel::title_embeddings(std::span<const TitleTokens> titles) const {
  if (titles.empty()) throw DomainError("title_embeddings: no titles");
  std::vector<const TitleTokens*> ptrs;
  for (const auto& t : titles) ptrs.push_back(&t);
  std::vector<std::size_t> lengths;
  const Tensor tokens = encode_titles(ptrs, std::vector<bool>(titles.size(), false), &lengths);
  std::vector<std::size_t> cls;
  std::size_t offset = 0;
  for (std::size_t n : lengths) {
    cls.push_back(offset);
    offset += n;
  }
  const auto& proj = *item_.title_projection;
  return nc::l2_normalize_rows(nc::linear(nc::gather_rows(tokens, cls), proj.w, proj.b));
}

ItemParts TowerModel::encode_item_parts(std::span<const ItemInput> items, FusionPath path) const {
  if (items.empty()) throw DomainError("encode_item_parts: no items");
  ItemParts parts;
  parts.path = path;
  const std::size_t n = items.size();

  std::vector<const TitleTokens*> titles;
  std::vector<bool> masked;
  TitleTokens empty;
  for (const auto& item : items) {
    titles.push_back(&item.title);
    masked.push_back(false);
  }
  for (const auto& item : items) {
    titles.push_back(path == FusionPath::kCompact ? &empty : &item.title);
    masked.push_back(true);
  }
  std::vector<std::size_t> lengths;
  const Tensor title_out = encode_titles(titles, masked, &lengths);
  std::size_t offset = 0;
  for (std::size_t t = 0; t < titles.size(); ++t) {
    auto piece = nc::slice_rows(title_out, offset, lengths[t]);
    (t < n ? parts.title_tokens : parts.default_title_tokens).push_back(piece);
    offset += lengths[t];
  }

  std::vector<const GrayImage*> images;
  for (const auto& item : items) {
    const auto& slots = item.images;
    if (slots.images.empty() || slots.images.size() > cfg_.k_images ||
        slots.mask.size() != slots.images.size()) {
      throw ShapeError("encode_item_parts: expected 1.." + std::to_string(cfg_.k_images) +
                       " image slots with aligned mask");
    }
    for (std::size_t s = 0; s < slots.images.size(); ++s) {
      if (path == FusionPath::kMasked || slots.mask.valid[s]) images.push_back(&slots.images[s]);
    }
  }
  const std::size_t p = cfg_.patches_per_image();
  const Tensor image_out = images.empty() ? Tensor() : encode_images(images);
  std::size_t next = 0;
  for (const auto& item : items) {
    std::vector<Tensor> slots;
    for (std::size_t s = 0; s < item.images.images.size(); ++s) {
      if (path == FusionPath::kMasked || item.images.mask.valid[s]) {
        slots.push_back(nc::slice_rows(image_out, next * p, p));
        ++next;
      } else {
        slots.emplace_back();
      }
    }
    parts.slot_tokens.push_back(std::move(slots));
    parts.slot_masks.push_back(item.images.mask);
  }
  return parts;
}

Tensor TowerModel::fuse(const ItemParts& parts, losses::FusionVariant variant) const {
  using losses::FusionVariant;
  const auto& fm = *item_.fusion;
  const std::size_t n = parts.title_tokens.size();
  const std::size_t p = cfg_.patches_per_image();
  const bool compact = parts.path == FusionPath::kCompact;
  const bool drop_title = variant == FusionVariant::kDefaultTitle;
  const bool drop_images = variant == FusionVariant::kDefaultImage;

  std::vector<Tensor> pieces;
  std::vector<std::size_t> lengths, cls_rows;
  std::vector<nc::AttentionMask> masks;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& title = drop_title ? parts.default_title_tokens[i] : parts.title_tokens[i];
    std::vector<Tensor> seq{nc::add_row(title, fm.text_type)};
    nc::AttentionMask mask = nc::AttentionMask::all_valid(1);
    for (std::size_t t = 1; t < title.rows(); ++t) mask.valid.push_back(!drop_title);

    const auto& slots = parts.slot_tokens[i];
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const bool valid = parts.slot_masks[i].valid[s] && !drop_images;
      if (compact && !valid) continue;
      seq.push_back(nc::add_row(slots[s], nc::slice_rows(fm.slot_embedding, s, 1)));
      for (std::size_t t = 0; t < p; ++t) mask.valid.push_back(valid);
    }
    const Tensor joined = seq.size() == 1 ? seq[0] : nc::concat_rows(seq);
    cls_rows.push_back(offset);
    offset += joined.rows();
    lengths.push_back(joined.rows());
    masks.push_back(std::move(mask));
    pieces.push_back(joined);
  }
  Tensor x = pieces.size() == 1 ? pieces[0] : nc::concat_rows(pieces);
  x = run_blocks(fm.blocks, x, lengths, masks);
  const Tensor cls = nc::layer_norm(nc::gather_rows(x, cls_rows), fm.ln_gain, fm.ln_shift);
  const auto& proj = *item_.fusion_projection;
  return nc::l2_normalize_rows(nc::linear(cls, proj.w, proj.b));
}

Tensor TowerModel::item_embeddings(std::span<const ItemInput> items,
                                   losses::FusionVariant variant, FusionPath path) const {
  return fuse(encode_item_parts(items, path), variant);
}

std::vector<float> TowerModel::query_embedding(const GrayImage& image) const {
  nc::NoGradGuard guard;
  return to_float_row(query_embeddings(std::span<const GrayImage>(&image, 1)));
}

std::vector<float> TowerModel::item_embedding(const ItemInput& item) const {
  nc::NoGradGuard guard;
  return to_float_row(item_embeddings(std::span<const ItemInput>(&item, 1)));
}

}  // namespace mmr::towers
