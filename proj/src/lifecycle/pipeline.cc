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

#include "mmr/lifecycle/pipeline.h"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"
#include "mmr/engine/engine.h"

namespace mmr::lifecycle {

Validation validate_item(const ProductRecord& product) {
  const bool has_text = std::any_of(product.title.begin(), product.title.end(), [](unsigned char c) {
    return !std::ispunct(c) && !std::isspace(c);
  });
  if (!has_text) return {false, "title"};
  if (decode_images(product).empty()) return {false, "images"};
  return {true, ""};
}

const char* job_kind_name(JobKind kind) { return kind == JobKind::kMiem ? "miem" : "i2i"; }

std::vector<FeatureUnit> feature_units(const CatalogSnapshot& catalog, JobKind kind) {
  std::vector<FeatureUnit> out;
  for (std::size_t p = 0; p < catalog.products.size(); ++p) {
    const auto& product = catalog.products[p];
    if (!product.available) continue;
    if (kind == JobKind::kMiem) {
      out.push_back({product.product_id, content_hash(product), p, std::nullopt});
      continue;
    }
    std::size_t decoded = 0;
    for (const auto& bytes : product.images) {
      if (!decode_pgm(bytes)) continue;
      out.push_back({engine::i2i_key(product.product_id, decoded), image_hash(bytes), p, decoded});
      ++decoded;
    }
  }
  return out;
}

FeaturePartition copy_forward(const FeaturePartition& prev, const CatalogSnapshot& catalog,
                              JobKind kind, const std::string& model_hash) {
  FeaturePartition out;
  out.day = catalog.day;
  out.model_hash = model_hash;
  if (prev.model_hash != model_hash) return out;
  for (const auto& u : feature_units(catalog, kind)) {
    const auto it = prev.entries.find(u.key);
    if (it != prev.entries.end() && it->second.content_hash == u.hash) out.entries.insert(*it);
  }
  return out;
}

Embedder model_embedder(const towers::TowerModel& model, JobKind kind) {
  if (kind == JobKind::kI2I) {
    return [&model](const ProductRecord& product, const FeatureUnit& unit) {
      const auto images = decode_images(product);
      if (!unit.image || *unit.image >= images.size()) throw DomainError("image unit out of range");
      return model.query_embedding(images[*unit.image]);
    };
  }
  return [&model](const ProductRecord& product, const FeatureUnit&) {
    return model.item_embedding(engine::item_input_for(product, model.config()));
  };
}

EmbedResult embed_new_items(const CatalogSnapshot& catalog, FeaturePartition partial, JobKind kind,
                            const Embedder& embed, std::int64_t embed_ts) {
  EmbedResult result;
  std::vector<std::optional<Validation>> checked(catalog.products.size());
  for (const auto& u : feature_units(catalog, kind)) {
    if (partial.entries.contains(u.key)) continue;
    const auto& product = catalog.products[u.product];
    auto& v = checked[u.product];
    if (!v) v = validate_item(product);
    if (!v->accepted) {
      result.failures.push_back({u.key, "invalid " + v->reason});
      continue;
    }
    try {
      auto vec = embed(product, u);
      if (vec.empty() || !std::all_of(vec.begin(), vec.end(), [](float x) { return std::isfinite(x); })) {
        throw NumericError("embedding is empty or non-finite");
      }
      partial.entries[u.key] = FeatureEntry{u.hash, std::move(vec), embed_ts};
      ++result.embedded;
    } catch (const std::exception& e) {
      result.failures.push_back({u.key, std::string("embedding failed: ") + e.what()});
    }
  }
  result.partition = std::move(partial);
  return result;
}

std::vector<IndexCommand> diff_partitions(const FeaturePartition& prev, const FeaturePartition& curr) {
  std::vector<IndexCommand> out;
  for (const auto& [key, e] : prev.entries) {
    if (!curr.entries.contains(key)) out.push_back({CommandKind::kDelete, key, {}});
  }
  for (const auto& [key, e] : curr.entries) {
    const auto it = prev.entries.find(key);
    if (it == prev.entries.end() || it->second.embedding != e.embedding) {
      out.push_back({CommandKind::kUpdate, key, e.embedding});
    }
  }
  return out;
}

ApplyReport apply_commands(ann::ConcurrentIndex& index, const std::vector<IndexCommand>& commands) {
  ApplyReport report;
  for (const auto& c : commands) {
    if (c.kind != CommandKind::kDelete) continue;
    try {
      index.remove(c.key);
      ++report.deleted;
    } catch (const NotFoundError&) {
      report.warnings.push_back("delete of unknown key '" + c.key + "'");
    }
  }
  for (const auto& c : commands) {
    if (c.kind != CommandKind::kUpdate) continue;
    const auto live = index.vector(c.key);
    if (live && *live == ann::normalize(c.embedding)) {
      ++report.unchanged;
      continue;
    }
    index.upsert(c.key, c.embedding);
    ++report.updated;
  }
  return report;
}

ann::HnswIndex build_index_from_partition(const FeaturePartition& partition,
                                          const ann::HnswConfig& cfg) {
  ann::HnswIndex index(cfg);
  for (const auto& [key, e] : partition.entries) index.insert(key, e.embedding);
  return index;
}

std::int64_t day_timestamp(const std::string& day) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  if (day.size() != 10 || std::sscanf(day.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3 ||
      m < 1 || m > 12 || d < 1 || d > 31) {
    throw DomainError("day must be YYYY-MM-DD, got '" + day + "'");
  }
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (!ymd.ok()) throw DomainError("no such date: " + day);
  return std::chrono::sys_seconds{std::chrono::sys_days{ymd}}.time_since_epoch().count();
}

std::string model_hash(const towers::TowerModel& model) {
  return to_hex(Fnv1a64().update(towers::serialize_checkpoint(model)).digest());
}

}  // namespace mmr::lifecycle
