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

#include <algorithm>
#include <charconv>
#include <cmath>
#include <unordered_map>

#include "mmr/common/errors.h"
#include "mmr/engine/engine.h"

namespace mmr::engine {

std::string i2i_key(const std::string& product_id, std::size_t image_id) {
  return product_id + "#" + std::to_string(image_id);
}

std::pair<std::string, std::size_t> parse_i2i_key(const std::string& key) {
  const auto pos = key.rfind('#');
  if (pos == std::string::npos) throw FormatError("i2i key without '#': " + key);
  std::size_t image = 0;
  const char* first = key.data() + pos + 1;
  const char* last = key.data() + key.size();
  const auto [ptr, ec] = std::from_chars(first, last, image);
  if (ec != std::errc() || ptr != last || first == last) throw FormatError("bad i2i key: " + key);
  return {key.substr(0, pos), image};
}

Box detect_stub(const GrayImage& image, double crop_fraction) {
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) {
    throw DomainError("detect_stub: crop fraction must be in (0, 1]");
  }
  auto span = [&](std::size_t extent) {
    const auto keep = static_cast<std::size_t>(std::llround(extent * crop_fraction));
    const std::size_t margin = (extent - std::max<std::size_t>(keep, 1)) / 2;
    return std::pair{margin, margin + std::max<std::size_t>(keep, 1)};
  };
  const auto [x0, x1] = span(image.width);
  const auto [y0, y1] = span(image.height);
  return Box{x0, y0, x1, y1};
}

std::vector<RecallCandidate> dedup_recall(std::span<const ann::SearchHit> hits, std::size_t k,
                                          Source source) {
  std::vector<RecallCandidate> out;
  if (source == Source::kMiem) {
    for (const auto& h : hits) out.push_back({h.key, Source::kMiem, h.score, std::nullopt});
  } else {
    std::unordered_map<std::string, std::size_t> at;
    for (const auto& h : hits) {
      auto [pid, image] = parse_i2i_key(h.key);
      const auto it = at.find(pid);
      if (it == at.end()) {
        at.emplace(pid, out.size());
        out.push_back({std::move(pid), Source::kI2I, h.score, image});
      } else if (h.score > out[it->second].score) {
        out[it->second].score = h.score;
        out[it->second].image_id = image;
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const RecallCandidate& a, const RecallCandidate& b) {
    return a.score > b.score || (a.score == b.score && a.product_id < b.product_id);
  });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<RecallCandidate> recall_with_dedup(const ann::ConcurrentIndex& index,
                                               std::span<const float> query, std::size_t k,
                                               Source source, std::size_t overfetch,
                                               std::size_t ef) {
  if (k == 0) throw DomainError("recall: k must be >= 1");
  const std::size_t fetch = source == Source::kI2I ? k * std::max<std::size_t>(overfetch, 1) : k;
  const auto hits = index.search(query, fetch, ef == 0 ? 0 : std::max(ef, fetch));
  return dedup_recall(hits, k, source);
}

std::vector<FusedCandidate> fuse_scores(std::span<const RecallCandidate> i2i,
                                        std::span<const RecallCandidate> miem, double weight) {
  if (!(weight >= 0.0)) throw DomainError("fuse_scores: weight must be >= 0");
  std::unordered_map<std::string, FusedCandidate> merged;
  for (const auto& c : i2i) {
    auto& f = merged[c.product_id];
    f.product_id = c.product_id;
    f.i2i = f.i2i ? std::max(*f.i2i, c.score) : c.score;
  }
  for (const auto& c : miem) {
    auto& f = merged[c.product_id];
    f.product_id = c.product_id;
    f.miem = f.miem ? std::max(*f.miem, c.score) : c.score;
  }
  std::vector<FusedCandidate> out;
  out.reserve(merged.size());
  for (auto& [id, f] : merged) {
    f.score = f.i2i.value_or(0.0) + weight * f.miem.value_or(0.0);
    out.push_back(std::move(f));
  }
  std::sort(out.begin(), out.end(), [](const FusedCandidate& a, const FusedCandidate& b) {
    return a.score > b.score || (a.score == b.score && a.product_id < b.product_id);
  });
  return out;
}

CatalogView::CatalogView(Catalog catalog) : catalog_(std::move(catalog)), by_id_(index_by_id(catalog_)) {
  for (const auto& p : catalog_) max_popularity_ = std::max(max_popularity_, p.popularity);
}

const ProductRecord* CatalogView::find(const std::string& product_id) const {
  const auto it = by_id_.find(product_id);
  return it == by_id_.end() ? nullptr : &catalog_[it->second];
}

std::vector<RankedItem> rank_candidates(std::span<const FusedCandidate> candidates,
                                        const CatalogView& catalog, double popularity_weight) {
  std::vector<RankedItem> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    const auto* p = catalog.find(c.product_id);
    if (!p) throw ConsistencyError("rank: product '" + c.product_id + "' is not in the catalog");
    const double pop = catalog.max_popularity() > 0 ? p->popularity / catalog.max_popularity() : 0.0;
    out.push_back({c.product_id, c.score + popularity_weight * pop, 0});
  }
  std::sort(out.begin(), out.end(), [](const RankedItem& a, const RankedItem& b) {
    return a.score > b.score || (a.score == b.score && a.product_id < b.product_id);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
  return out;
}

}  // namespace mmr::engine
