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

#include "mmr/engine/engine.h"

#include <chrono>
#include <cmath>

#include "mmr/common/errors.h"

namespace mmr::engine {
namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point& mark) {
  const auto now = Clock::now();
  const double ms = std::chrono::duration<double, std::milli>(now - mark).count();
  mark = now;
  return ms;
}

}  // namespace

towers::ItemInput item_input_for(const ProductRecord& product, const towers::TowerConfig& cfg) {
  const auto images = decode_images(product);
  return towers::make_item_input(towers::tokenize_title(product.title, cfg), images,
                                 product.category, cfg);
}

IndexPair build_indexes(const towers::TowerModel& model, const Catalog& catalog,
                        const ann::HnswConfig& cfg) {
  ann::HnswConfig c = cfg;
  c.dim = model.config().output_dim;
  IndexPair out{ann::HnswIndex(c), ann::HnswIndex(c)};
  for (const auto& p : catalog) {
    if (!p.available) continue;
    const auto images = decode_images(p);
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.i2i.insert(i2i_key(p.product_id, i), model.query_embedding(images[i]));
    }
    out.miem.insert(p.product_id, model.item_embedding(towers::make_item_input(
                                      towers::tokenize_title(p.title, model.config()), images,
                                      p.category, model.config())));
  }
  return out;
}

SearchEngine::SearchEngine(std::shared_ptr<const towers::TowerModel> model,
                           std::shared_ptr<DualIndexSet> indexes,
                           std::shared_ptr<const CatalogView> catalog, EngineConfig cfg,
                           ActivityLog* log)
    : model_(std::move(model)),
      indexes_(std::move(indexes)),
      catalog_(std::move(catalog)),
      cfg_(cfg),
      log_(log) {}

void SearchEngine::set_catalog(std::shared_ptr<const CatalogView> catalog) {
  std::lock_guard lock(catalog_mutex_);
  catalog_ = std::move(catalog);
}

std::shared_ptr<const CatalogView> SearchEngine::catalog() const {
  std::lock_guard lock(catalog_mutex_);
  return catalog_;
}

void SearchEngine::validate(const SearchRequest& r) const {
  if (r.image.has_value() == r.vector.has_value()) {
    throw RequestError("exactly one of image or vector is required");
  }
  if (r.page_size == 0 || r.page_size > cfg_.max_page_size) {
    throw RequestError("page_size must be in [1, " + std::to_string(cfg_.max_page_size) + "]");
  }
  if (r.image) {
    const auto& img = *r.image;
    if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
      throw RequestError("image has no pixels");
    }
  }
  if (r.vector) {
    if (r.vector->size() != model_->config().output_dim) {
      throw RequestError("vector must have " + std::to_string(model_->config().output_dim) +
                         " components");
    }
    double norm = 0.0;
    for (float x : *r.vector) {
      if (!std::isfinite(x)) throw RequestError("vector has non-finite components");
      norm += double{x} * x;
    }
    if (norm == 0.0) throw RequestError("vector is zero");
  }
}

SearchResponse SearchEngine::handle_search(const SearchRequest& request) {
  SearchResponse resp;
  resp.request_id = request.request_id.empty()
                        ? "req-" + std::to_string(next_id_.fetch_add(1))
                        : request.request_id;
  auto mark = Clock::now();
  try {
    validate(request);
  } catch (const RequestError& e) {
    if (log_) log_->append({0, resp.request_id, EventKind::kRequest, {{"error", e.what()}}});
    throw;
  }
  resp.timings_ms.emplace_back("parse", ms_since(mark));

  std::vector<float> query;
  if (request.image) {
    const Box box = detect_stub(*request.image, cfg_.crop_fraction);
    GrayImage region = crop(*request.image, box);
    const std::size_t size = model_->config().image_size;
    if (region.width != size || region.height != size) region = resize_bilinear(region, size, size);
    resp.timings_ms.emplace_back("detect", ms_since(mark));
    query = model_->query_embedding(region);
    resp.timings_ms.emplace_back("embed", ms_since(mark));
  } else {
    query = *request.vector;
  }

  const std::size_t k = request.page_size;
  const auto i2i =
      recall_with_dedup(indexes_->i2i, query, k, Source::kI2I, cfg_.overfetch, cfg_.ef_search);
  resp.timings_ms.emplace_back("recall_i2i", ms_since(mark));
  const auto miem = recall_with_dedup(indexes_->miem, query, k, Source::kMiem, 1, cfg_.ef_search);
  resp.timings_ms.emplace_back("recall_miem", ms_since(mark));
  auto fused = fuse_scores(i2i, miem, cfg_.fusion_weight);
  if (fused.size() > cfg_.union_cap_factor * k) fused.resize(cfg_.union_cap_factor * k);
  resp.timings_ms.emplace_back("fuse", ms_since(mark));
  auto ranked = rank_candidates(fused, *catalog(), cfg_.popularity_weight);
  if (ranked.size() > k) ranked.resize(k);
  resp.items = std::move(ranked);
  resp.timings_ms.emplace_back("rank", ms_since(mark));

  if (log_) {
    log_->append({0, resp.request_id, EventKind::kRequest,
                  {{"page_size", k},
                   {"input", request.image ? "image" : "vector"},
                   {"returned", resp.items.size()}}});
    for (const auto& item : resp.items) {
      log_->append({0, resp.request_id, EventKind::kImpression,
                    {{"product_id", item.product_id}, {"rank", item.rank}, {"score", item.score}}});
    }
  }
  resp.timings_ms.emplace_back("log", ms_since(mark));
  return resp;
}

void SearchEngine::record_event(const std::string& request_id, EventKind kind,
                                const std::string& product_id) {
  if (request_id.empty()) throw RequestError("event needs a request_id");
  if (kind == EventKind::kRequest || kind == EventKind::kImpression) {
    throw RequestError("request and impression events are written by the search path");
  }
  if (product_id.empty()) throw RequestError("event needs a product_id");
  if (log_) log_->append({0, request_id, kind, {{"product_id", product_id}}});
}

}  // namespace mmr::engine
