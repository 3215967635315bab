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

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmr/annindex/concurrent.h"
#include "mmr/common/catalog.h"
#include "mmr/common/image.h"
#include "mmr/engine/activity_log.h"
#include "mmr/towers/model.h"

namespace mmr::engine {

enum class Source { kI2I, kMiem };

struct RecallCandidate {
  std::string product_id;
  Source source = Source::kMiem;
  double score = 0.0;
  std::optional<std::size_t> image_id;  // I2I only
};

struct FusedCandidate {
  std::string product_id;
  double score = 0.0;
  std::optional<double> i2i;
  std::optional<double> miem;
};

struct RankedItem {
  std::string product_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based

  bool operator==(const RankedItem&) const = default;
};

// I2I keys are "<product_id>#<image index>".
std::string i2i_key(const std::string& product_id, std::size_t image_id);
// Splits at the last '#'; throws FormatError when there is none.
std::pair<std::string, std::size_t> parse_i2i_key(const std::string& key);

// One box covering the centered `crop_fraction` of each side (1 = whole image).
Box detect_stub(const GrayImage& image, double crop_fraction = 1.0);

// I2I hits are keyed per image: each product keeps its best image and the
// result is cut to k. MIEM hits are already one per product.
std::vector<RecallCandidate> dedup_recall(std::span<const ann::SearchHit> hits, std::size_t k,
                                          Source source);
// Searches k * overfetch keys on the I2I path, k on the MIEM path.
std::vector<RecallCandidate> recall_with_dedup(const ann::ConcurrentIndex& index,
                                               std::span<const float> query, std::size_t k,
                                               Source source, std::size_t overfetch = 3,
                                               std::size_t ef = 0);

// fused = i2i (0 if absent) + weight * miem (0 if absent) over the union,
// sorted by fused score descending then product id. Throws DomainError for
// a negative weight.
std::vector<FusedCandidate> fuse_scores(std::span<const RecallCandidate> i2i,
                                        std::span<const RecallCandidate> miem, double weight);

// Catalog lookup used at ranking time.
class CatalogView {
 public:
  explicit CatalogView(Catalog catalog);
  const ProductRecord* find(const std::string& product_id) const;
  const Catalog& products() const { return catalog_; }
  double max_popularity() const { return max_popularity_; }

 private:
  Catalog catalog_;
  std::map<std::string, std::size_t> by_id_;
  double max_popularity_ = 0.0;
};

// final = fused + popularity_weight * popularity / max catalog popularity;
// sorted descending then by id, ranks from 1. Throws ConsistencyError for an
// id missing from the catalog.
std::vector<RankedItem> rank_candidates(std::span<const FusedCandidate> candidates,
                                        const CatalogView& catalog, double popularity_weight);

// Both serving indexes: I2I holds one entry per catalog image, MIEM one per
// product.
struct DualIndexSet {
  ann::ConcurrentIndex i2i;
  ann::ConcurrentIndex miem;
};

struct IndexPair {
  ann::HnswIndex i2i;
  ann::HnswIndex miem;
};

// Embeds every available product: each decodable image through the query
// tower into I2I and the fused item embedding into MIEM.
IndexPair build_indexes(const towers::TowerModel& model, const Catalog& catalog,
                        const ann::HnswConfig& cfg);
towers::ItemInput item_input_for(const ProductRecord& product, const towers::TowerConfig& cfg);

struct EngineConfig {
  std::size_t overfetch = 3;
  double fusion_weight = 1.0;
  double popularity_weight = 0.0;
  std::size_t union_cap_factor = 2;  // fused union is cut to this * page size
  std::size_t default_page_size = 10;
  std::size_t max_page_size = 100;
  double crop_fraction = 1.0;
  std::size_t ef_search = 0;  // 0: index default
};

struct SearchRequest {
  std::string request_id;  // generated when empty
  std::optional<GrayImage> image;
  std::optional<std::vector<float>> vector;  // precomputed query embedding
  std::size_t page_size = 10;
};

struct SearchResponse {
  std::string request_id;
  std::vector<RankedItem> items;
  std::vector<std::pair<std::string, double>> timings_ms;
};

class SearchEngine {
 public:
  SearchEngine(std::shared_ptr<const towers::TowerModel> model, std::shared_ptr<DualIndexSet> indexes,
               std::shared_ptr<const CatalogView> catalog, EngineConfig cfg,
               ActivityLog* log = nullptr);

  // Throws RequestError on a malformed request after logging it.
  SearchResponse handle_search(const SearchRequest& request);
  // Logs an interaction; throws RequestError for request/impression kinds
  // or an empty request id.
  void record_event(const std::string& request_id, EventKind kind, const std::string& product_id);

  void set_catalog(std::shared_ptr<const CatalogView> catalog);
  std::shared_ptr<const CatalogView> catalog() const;
  DualIndexSet& indexes() { return *indexes_; }
  const EngineConfig& config() const { return cfg_; }
  const towers::TowerModel& model() const { return *model_; }

 private:
  void validate(const SearchRequest& request) const;

  std::shared_ptr<const towers::TowerModel> model_;
  std::shared_ptr<DualIndexSet> indexes_;
  std::shared_ptr<const CatalogView> catalog_;
  mutable std::mutex catalog_mutex_;
  EngineConfig cfg_;
  ActivityLog* log_;
  std::atomic<std::uint64_t> next_id_{1};
};

}  // namespace mmr::engine
