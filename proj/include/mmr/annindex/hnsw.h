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

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace mmr::ann {

struct HnswConfig {
  std::size_t dim = 32;
  std::size_t m = 16;  // layer 0 keeps up to 2 * m neighbors
  std::size_t ef_construction = 200;
  std::size_t ef_search = 64;
  std::uint64_t seed = 1;
  double rebuild_ratio = 0.2;  // deleted / live above this triggers a rebuild; <= 0 disables

  // Throws DomainError on zero dim, m < 2 or ef_construction == 0.
  void validate() const;
  bool operator==(const HnswConfig&) const = default;
};

struct SearchHit {
  std::string key;
  double score = 0.0;  // cosine similarity

  bool operator==(const SearchHit&) const = default;
};

struct KeyedVector {
  std::string key;
  std::vector<float> vec;
};

// Unit-length copy; throws DomainError for a zero or non-finite vector.
std::vector<float> normalize(std::span<const float> vec);

// Exact top-k by cosine, ties broken by ascending key.
std::vector<SearchHit> brute_force_knn(std::span<const KeyedVector> store,
                                       std::span<const float> query, std::size_t k);

// Hierarchical navigable small world graph over unit-normalized float
// vectors with string keys. Deletion tombstones a node; its edges stay in the
// graph for navigation until the next rebuild.
class HnswIndex {
 public:
  explicit HnswIndex(HnswConfig cfg = {});

  const HnswConfig& config() const { return cfg_; }

  // Throws ShapeError on a dim mismatch, ConflictError if the key is live and
  // DomainError for a zero vector. A tombstoned key may be inserted again.
  void insert(const std::string& key, std::span<const float> vec);

  // Tombstones the key, then rebuilds in place when the deleted/live ratio
  // exceeds the configured threshold. Throws NotFoundError for a key that is
  // not live.
  void remove(const std::string& key);
  // Tombstone only, never rebuilds.
  void mark_deleted(const std::string& key);

  // At most k live keys sorted by score descending then key ascending.
  // ef == 0 uses the configured ef_search. When ef covers every live node
  // the scan is exhaustive and equals brute_force_knn.
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k,
                                std::size_t ef = 0) const;

  // Fresh graph over the live entries (in insertion order), no tombstones.
  HnswIndex rebuilt() const;
  bool needs_rebuild() const;

  bool contains(const std::string& key) const;
  std::size_t live_count() const { return live_; }
  std::size_t deleted_count() const { return deleted_; }
  std::size_t node_count() const { return nodes_.size(); }
  // Stored (normalized) vector of a live key; throws NotFoundError.
  std::span<const float> vector(const std::string& key) const;
  std::vector<KeyedVector> live_entries() const;

  // Degree bounds, level monotonicity, edge targets in range, key map
  // consistency and counters. Throws ConsistencyError.
  void check_invariants() const;

  std::string serialize() const;
  // Throws FormatError on malformed input.
  static HnswIndex deserialize(std::string_view bytes);

  bool operator==(const HnswIndex& other) const;

 private:
  struct Node {
    std::string key;
    int level = 0;
    bool deleted = false;
    std::vector<std::vector<std::uint32_t>> links;  // one list per layer 0..level

    bool operator==(const Node&) const = default;
  };
  struct Scored {
    double score;
    std::uint32_t id;
  };

  const float* data(std::uint32_t id) const { return vectors_.data() + std::size_t{id} * cfg_.dim; }
  double similarity(const float* a, const float* b) const;
  std::size_t max_links(int layer) const { return layer == 0 ? 2 * cfg_.m : cfg_.m; }
  int draw_level(std::uint64_t ordinal) const;
  std::uint32_t greedy(const float* q, std::uint32_t ep, int layer) const;
  std::vector<Scored> search_layer(const float* q, std::span<const std::uint32_t> entry,
                                   std::size_t ef, int layer, bool live_only) const;
  std::vector<std::uint32_t> select_neighbors(std::vector<Scored> candidates, std::size_t m) const;
  void shrink(std::uint32_t id, int layer);
  std::vector<SearchHit> exhaustive(const float* q, std::size_t k) const;
  std::vector<float> normalized(std::span<const float> vec) const;

  HnswConfig cfg_;
  std::vector<Node> nodes_;
  std::vector<float> vectors_;
  std::unordered_map<std::string, std::uint32_t> live_ids_;
  std::int64_t entry_ = -1;
  int max_level_ = -1;
  std::size_t live_ = 0;
  std::size_t deleted_ = 0;
};

}  // namespace mmr::ann
