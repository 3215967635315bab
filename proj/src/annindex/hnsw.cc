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

#include "mmr/annindex/hnsw.h"

#include <algorithm>
#include <cmath>
#include <queue>

#include "mmr/common/errors.h"

namespace mmr::ann {
namespace {

constexpr int kMaxLevel = 32;

double dot(const float* a, const float* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

}  // namespace

std::vector<float> normalize(std::span<const float> vec) {
  double norm = 0.0;
  for (float x : vec) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DomainError("vector must be finite and non-zero");
  std::vector<float> out(vec.size());
  for (std::size_t i = 0; i < vec.size(); ++i) out[i] = static_cast<float>(vec[i] / norm);
  return out;
}

namespace {

bool hit_before(const SearchHit& a, const SearchHit& b) {
  return a.score > b.score || (a.score == b.score && a.key < b.key);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

void HnswConfig::validate() const {
  if (dim == 0) throw DomainError("HnswConfig: dim must be > 0");
  if (m < 2) throw DomainError("HnswConfig: m must be >= 2");
  if (ef_construction == 0) throw DomainError("HnswConfig: ef_construction must be > 0");
}

std::vector<SearchHit> brute_force_knn(std::span<const KeyedVector> store,
                                       std::span<const float> query, std::size_t k) {
  if (store.empty() || k == 0) return {};
  const auto q = normalize(query);
  std::vector<SearchHit> hits;
  hits.reserve(store.size());
  for (const auto& e : store) {
    if (e.vec.size() != q.size()) throw ShapeError("brute_force_knn: dim mismatch");
    const auto v = normalize(e.vec);
    hits.push_back({e.key, dot(q.data(), v.data(), q.size())});
  }
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
  hits.resize(n);
  return hits;
}

HnswIndex::HnswIndex(HnswConfig cfg) : cfg_(cfg) { cfg_.validate(); }

double HnswIndex::similarity(const float* a, const float* b) const { return dot(a, b, cfg_.dim); }

std::vector<float> HnswIndex::normalized(std::span<const float> vec) const {
  if (vec.size() != cfg_.dim) {
    throw ShapeError("hnsw: expected dim " + std::to_string(cfg_.dim) + ", got " +
                     std::to_string(vec.size()));
  }
  return normalize(vec);
}

int HnswIndex::draw_level(std::uint64_t ordinal) const {
  const std::uint64_t bits = splitmix64(cfg_.seed * 0x9E3779B97F4A7C15ULL ^ splitmix64(ordinal));
  const double u = (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double ml = 1.0 / std::log(static_cast<double>(cfg_.m));
  return std::min(kMaxLevel, static_cast<int>(std::floor(-std::log(u) * ml)));
}

std::uint32_t HnswIndex::greedy(const float* q, std::uint32_t ep, int layer) const {
  double best = similarity(q, data(ep));
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::uint32_t nb : nodes_[ep].links[layer]) {
      const double s = similarity(q, data(nb));
      if (s > best) {
        best = s;
        ep = nb;
        moved = true;
      }
    }
  }
  return ep;
}

std::vector<HnswIndex::Scored> HnswIndex::search_layer(const float* q,
                                                      std::span<const std::uint32_t> entry,
                                                      std::size_t ef, int layer,
                                                      bool live_only) const {
  auto better = [](const Scored& a, const Scored& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  };
  auto worse_first = [&](const Scored& a, const Scored& b) { return better(a, b); };
  auto best_first = [&](const Scored& a, const Scored& b) { return better(b, a); };
  std::priority_queue<Scored, std::vector<Scored>, decltype(best_first)> candidates(best_first);
  std::priority_queue<Scored, std::vector<Scored>, decltype(worse_first)> results(worse_first);
  std::vector<char> visited(nodes_.size(), 0);

  for (std::uint32_t e : entry) {
    if (visited[e]) continue;
    visited[e] = 1;
    const Scored s{similarity(q, data(e)), e};
    candidates.push(s);
    if (!live_only || !nodes_[e].deleted) results.push(s);
  }
  while (!candidates.empty()) {
    const Scored c = candidates.top();
    if (results.size() >= ef && better(results.top(), c)) break;
    candidates.pop();
    for (std::uint32_t nb : nodes_[c.id].links[layer]) {
      if (visited[nb]) continue;
      visited[nb] = 1;
      const Scored s{similarity(q, data(nb)), nb};
      if (results.size() < ef || better(s, results.top())) {
        candidates.push(s);
        if (!live_only || !nodes_[nb].deleted) {
          results.push(s);
          if (results.size() > ef) results.pop();
        }
      }
    }
  }
  std::vector<Scored> out;
  out.reserve(results.size());
  while (!results.empty()) {
    out.push_back(results.top());
    results.pop();
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<std::uint32_t> HnswIndex::select_neighbors(std::vector<Scored> candidates,
                                                       std::size_t m) const {
  std::sort(candidates.begin(), candidates.end(), [](const Scored& a, const Scored& b) {
    return a.score > b.score || (a.score == b.score && a.id < b.id);
  });
  std::vector<std::uint32_t> out;
  if (candidates.size() <= m) {
    for (const auto& c : candidates) out.push_back(c.id);
    return out;
  }
  for (const auto& c : candidates) {
    if (out.size() >= m) break;
    bool keep = true;
    for (std::uint32_t s : out) {
      if (similarity(data(c.id), data(s)) > c.score) {
        keep = false;
        break;
      }
    }
    if (keep) out.push_back(c.id);
  }
  return out;
}

void HnswIndex::shrink(std::uint32_t id, int layer) {
  auto& links = nodes_[id].links[layer];
  if (links.size() <= max_links(layer)) return;
  std::vector<Scored> cands;
  cands.reserve(links.size());
  for (std::uint32_t nb : links) cands.push_back({similarity(data(id), data(nb)), nb});
  links = select_neighbors(std::move(cands), max_links(layer));
}

void HnswIndex::insert(const std::string& key, std::span<const float> vec) {
  auto v = normalized(vec);
  if (live_ids_.contains(key)) throw ConflictError("hnsw: key '" + key + "' is already live");
  if (nodes_.size() >= UINT32_MAX) throw DomainError("hnsw: index is full");
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  const int level = draw_level(id);
  Node node;
  node.key = key;
  node.level = level;
  node.links.resize(static_cast<std::size_t>(level) + 1);
  nodes_.push_back(std::move(node));
  vectors_.insert(vectors_.end(), v.begin(), v.end());
  live_ids_.emplace(key, id);
  ++live_;

  if (entry_ < 0) {
    entry_ = id;
    max_level_ = level;
    return;
  }
  const float* q = data(id);
  auto ep = static_cast<std::uint32_t>(entry_);
  for (int l = max_level_; l > level; --l) ep = greedy(q, ep, l);
  std::vector<std::uint32_t> eps{ep};
  for (int l = std::min(level, max_level_); l >= 0; --l) {
    auto found = search_layer(q, eps, cfg_.ef_construction, l, false);
    const auto chosen = select_neighbors(found, cfg_.m);
    nodes_[id].links[l] = chosen;
    for (std::uint32_t nb : chosen) {
      nodes_[nb].links[l].push_back(id);
      shrink(nb, l);
    }
    eps.clear();
    for (const auto& f : found) eps.push_back(f.id);
  }
  if (level > max_level_) {
    entry_ = id;
    max_level_ = level;
  }
}

void HnswIndex::mark_deleted(const std::string& key) {
  const auto it = live_ids_.find(key);
  if (it == live_ids_.end()) throw NotFoundError("hnsw: key '" + key + "' is not live");
  nodes_[it->second].deleted = true;
  live_ids_.erase(it);
  --live_;
  ++deleted_;
}

bool HnswIndex::needs_rebuild() const {
  if (cfg_.rebuild_ratio <= 0.0 || deleted_ == 0) return false;
  return static_cast<double>(deleted_) > cfg_.rebuild_ratio * static_cast<double>(live_);
}

void HnswIndex::remove(const std::string& key) {
  mark_deleted(key);
  if (needs_rebuild()) *this = rebuilt();
}

HnswIndex HnswIndex::rebuilt() const {
  HnswIndex fresh(cfg_);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].deleted) continue;
    fresh.insert(nodes_[i].key, std::span<const float>(data(static_cast<std::uint32_t>(i)), cfg_.dim));
  }
  return fresh;
}

std::vector<SearchHit> HnswIndex::exhaustive(const float* q, std::size_t k) const {
  std::vector<SearchHit> hits;
  hits.reserve(live_);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].deleted) continue;
    hits.push_back({nodes_[i].key, similarity(q, data(static_cast<std::uint32_t>(i)))});
  }
  const std::size_t n = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(), hit_before);
  hits.resize(n);
  return hits;
}

std::vector<SearchHit> HnswIndex::search(std::span<const float> query, std::size_t k,
                                         std::size_t ef) const {
  if (k == 0) throw DomainError("hnsw: k must be >= 1");
  const auto q = normalized(query);
  if (live_ == 0) return {};
  ef = std::max(ef == 0 ? cfg_.ef_search : ef, k);
  if (ef >= live_) return exhaustive(q.data(), k);

  auto ep = static_cast<std::uint32_t>(entry_);
  for (int l = max_level_; l > 0; --l) ep = greedy(q.data(), ep, l);
  const std::uint32_t eps[] = {ep};
  const auto found = search_layer(q.data(), eps, ef, 0, true);
  std::vector<SearchHit> hits;
  for (std::size_t i = 0; i < found.size() && i < k; ++i) {
    hits.push_back({nodes_[found[i].id].key, found[i].score});
  }
  std::sort(hits.begin(), hits.end(), hit_before);
  return hits;
}

bool HnswIndex::contains(const std::string& key) const { return live_ids_.contains(key); }

std::span<const float> HnswIndex::vector(const std::string& key) const {
  const auto it = live_ids_.find(key);
  if (it == live_ids_.end()) throw NotFoundError("hnsw: key '" + key + "' is not live");
  return {data(it->second), cfg_.dim};
}

std::vector<KeyedVector> HnswIndex::live_entries() const {
  std::vector<KeyedVector> out;
  out.reserve(live_);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].deleted) continue;
    const float* d = data(static_cast<std::uint32_t>(i));
    out.push_back({nodes_[i].key, std::vector<float>(d, d + cfg_.dim)});
  }
  return out;
}

void HnswIndex::check_invariants() const {
  auto fail = [](const std::string& what) { throw ConsistencyError("hnsw invariant: " + what); };
  if (vectors_.size() != nodes_.size() * cfg_.dim) fail("vector storage size");
  std::size_t live = 0;
  int top = -1;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.level < 0 || n.links.size() != static_cast<std::size_t>(n.level) + 1) fail("level/links");
    top = std::max(top, n.level);
    for (int l = 0; l <= n.level; ++l) {
      const auto& links = n.links[l];
      if (links.size() > max_links(l)) fail("degree bound at node " + std::to_string(i));
      for (std::uint32_t nb : links) {
        if (nb >= nodes_.size() || nb == i) fail("edge target at node " + std::to_string(i));
        if (nodes_[nb].level < l) fail("edge to a node below layer " + std::to_string(l));
      }
    }
    if (!n.deleted) {
      ++live;
      const auto it = live_ids_.find(n.key);
      if (it == live_ids_.end() || it->second != i) fail("key map for '" + n.key + "'");
    }
  }
  if (live != live_ || live_ids_.size() != live_) fail("live counter");
  if (nodes_.size() - live != deleted_) fail("deleted counter");
  if (nodes_.empty() != (entry_ < 0)) fail("entry point");
  if (entry_ >= 0 && (static_cast<std::size_t>(entry_) >= nodes_.size() ||
                      nodes_[static_cast<std::size_t>(entry_)].level != max_level_ || top != max_level_)) {
    fail("entry point level");
  }
}

bool HnswIndex::operator==(const HnswIndex& other) const {
  return cfg_ == other.cfg_ && nodes_ == other.nodes_ && vectors_ == other.vectors_ &&
         entry_ == other.entry_ && max_level_ == other.max_level_ && live_ == other.live_ &&
         deleted_ == other.deleted_;
}

}  // namespace mmr::ann
