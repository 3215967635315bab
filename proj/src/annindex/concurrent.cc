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

#include "mmr/annindex/concurrent.h"

namespace mmr::ann {

ConcurrentIndex::ConcurrentIndex(HnswIndex index) : index_(std::move(index)) {}

void ConcurrentIndex::rebuild_locked_writer() {
  HnswIndex fresh = [&] {
    std::shared_lock read(mutex_);
    return index_.rebuilt();
  }();
  std::unique_lock write(mutex_);
  index_ = std::move(fresh);
}

void ConcurrentIndex::insert(const std::string& key, std::span<const float> vec) {
  std::lock_guard w(writer_);
  std::unique_lock write(mutex_);
  index_.insert(key, vec);
}

void ConcurrentIndex::remove(const std::string& key) {
  std::lock_guard w(writer_);
  bool rebuild = false;
  {
    std::unique_lock write(mutex_);
    index_.mark_deleted(key);
    rebuild = index_.needs_rebuild();
  }
  if (rebuild) rebuild_locked_writer();
}

void ConcurrentIndex::upsert(const std::string& key, std::span<const float> vec) {
  std::lock_guard w(writer_);
  bool rebuild = false;
  {
    std::unique_lock write(mutex_);
    if (index_.contains(key)) index_.mark_deleted(key);
    index_.insert(key, vec);
    rebuild = index_.needs_rebuild();
  }
  if (rebuild) rebuild_locked_writer();
}

std::vector<SearchHit> ConcurrentIndex::search(std::span<const float> query, std::size_t k,
                                               std::size_t ef) const {
  std::shared_lock read(mutex_);
  return index_.search(query, k, ef);
}

void ConcurrentIndex::rebuild() {
  std::lock_guard w(writer_);
  rebuild_locked_writer();
}

void ConcurrentIndex::replace(HnswIndex index) {
  std::lock_guard w(writer_);
  std::unique_lock write(mutex_);
  index_ = std::move(index);
}

std::size_t ConcurrentIndex::live_count() const {
  std::shared_lock read(mutex_);
  return index_.live_count();
}

bool ConcurrentIndex::contains(const std::string& key) const {
  std::shared_lock read(mutex_);
  return index_.contains(key);
}

std::optional<std::vector<float>> ConcurrentIndex::vector(const std::string& key) const {
  std::shared_lock read(mutex_);
  if (!index_.contains(key)) return std::nullopt;
  const auto v = index_.vector(key);
  return std::vector<float>(v.begin(), v.end());
}

HnswIndex ConcurrentIndex::snapshot() const {
  std::shared_lock read(mutex_);
  return index_;
}

}  // namespace mmr::ann
