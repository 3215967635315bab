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

#include "mmr/trainer/grad_suite.h"

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/losses/losses.h"
#include "mmr/numcore/gradcheck.h"
#include "mmr/towers/model.h"

namespace mmr::trainer {
namespace {

using losses::FusionVariant;
using nc::Tensor;

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, bool grad = true) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({r, c}, std::move(v), grad);
}

GrayImage random_image(Rng& rng, std::size_t size) {
  GrayImage img = GrayImage::blank(size, size);
  for (auto& p : img.pixels) p = rng.uniform();
  return img;
}

towers::ItemInput random_item(Rng& rng, const towers::TowerConfig& cfg) {
  std::vector<GrayImage> images;
  for (std::size_t i = 0, n = 1 + rng.below(cfg.k_images); i < n; ++i) {
    images.push_back(random_image(rng, cfg.image_size));
  }
  towers::TitleTokens title;
  for (std::size_t i = 0, n = 1 + rng.below(cfg.max_title_len); i < n; ++i) {
    title.ids.push_back(towers::kFirstWordId +
                        static_cast<std::uint32_t>(rng.below(cfg.vocab_size - towers::kFirstWordId)));
  }
  return towers::make_item_input(title, images, 0, cfg);
}

GradSuiteRow row(const std::string& name, const nc::GradCheckResult& r) {
  return {name, r.max_relative_error, r.checked};
}

}  // namespace

std::vector<GradSuiteRow> run_grad_suite(std::uint64_t seed, const GradSuiteConfig& cfg) {
  if (cfg.batch == 0 || cfg.batch > 8 || cfg.dim == 0 || cfg.dim > 16) {
    throw DomainError("grad suite: batch must be in [1, 8] and dim in [1, 16]");
  }
  Rng rng(seed);
  const std::size_t n = cfg.batch, d = cfg.dim;
  losses::LossConfig lc;
  lc.gamma = 5.0;
  lc.margin = 0.2;
  std::vector<GradSuiteRow> out;

  auto q = random_tensor(rng, n, d), t = random_tensor(rng, n, d);
  out.push_back(row("info_nce", nc::grad_check_params([&] { return losses::info_nce({q, t, {}}); },
                                                      {q, t}, cfg.eps)));

  const auto memory = random_tensor(rng, 3, d, false);
  out.push_back(row("am_info_nce",
                    nc::grad_check_params([&] { return losses::am_info_nce(q, t, lc, memory); },
                                          {q, t}, cfg.eps)));

  auto no_image = random_tensor(rng, n, d), no_title = random_tensor(rng, n, d);
  out.push_back(row("modality_balance_loss",
                    nc::grad_check_params(
                        [&] { return losses::modality_balance_loss(q, no_image, no_title, lc); },
                        {q, no_image, no_title}, cfg.eps)));

  towers::TowerConfig tc;
  tc.token_dim = 16;
  tc.heads = 2;
  tc.ffn_dim = 32;
  tc.output_dim = 16;
  tc.fusion_layers = 1;
  tc.vocab_size = 64;
  tc.max_title_len = 6;
  tc.k_images = 2;
  const towers::TowerModel model(tc, seed);
  const std::size_t items_n = std::min<std::size_t>(n, 3);
  std::vector<GrayImage> queries;
  std::vector<towers::ItemInput> items;
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < items_n; ++i) {
    queries.push_back(random_image(rng, tc.image_size));
    items.push_back(random_item(rng, tc));
    ids.push_back(static_cast<std::int64_t>(i));
  }
  losses::XbmBuffer xbm(16);
  {
    nc::NoGradGuard guard;
    xbm.push(model.item_embeddings(items), ids, losses::Side::kFusion);
    xbm.push(model.query_embeddings(queries), ids, losses::Side::kQuery);
  }
  auto final_fn = [&] {
    const auto parts = model.encode_item_parts(items);
    losses::XbmBuffer snapshot = xbm;
    return losses::final_loss(model.query_embeddings(queries),
                              [&](FusionVariant v) { return model.fuse(parts, v); }, snapshot, ids,
                              lc);
  };
  out.push_back(row("final_loss", nc::grad_check_params(final_fn, model.parameters(), cfg.eps,
                                                        cfg.tower_coords, seed)));
  return out;
}

}  // namespace mmr::trainer
