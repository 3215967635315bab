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

#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>

#include "mmr/annindex/hnsw.h"

namespace mmr::ann {

// Many concurrent readers or one writer. Threshold rebuilds are built off to
// the side while readers keep searching the old graph, then swapped in under
// the exclusive lock.
class ConcurrentIndex {
 public:
  explicit ConcurrentIndex(HnswIndex index = HnswIndex{});

  void insert(const std::string& key, std::span<const float> vec);
  void remove(const std::string& key);
  // Replaces a live key's vector (insert when absent).
  void upsert(const std::string& key, std::span<const float> vec);
  std::vector<SearchHit> search(std::span<const float> query, std::size_t k,
                                std::size_t ef = 0) const;
  void rebuild();
  void replace(HnswIndex index);

  std::size_t live_count() const;
  bool contains(const std::string& key) const;
  // Stored normalized vector of a live key.
  std::optional<std::vector<float>> vector(const std::string& key) const;
  // Consistent copy taken under the shared lock.
  HnswIndex snapshot() const;

 private:
  void rebuild_locked_writer();

  mutable std::shared_mutex mutex_;
  std::mutex writer_;
  HnswIndex index_;
};

}  // namespace mmr::ann
