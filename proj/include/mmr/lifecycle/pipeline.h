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

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmr/annindex/concurrent.h"
#include "mmr/lifecycle/partition.h"
#include "mmr/towers/model.h"

namespace mmr::lifecycle {

struct Validation {
  bool accepted = true;
  std::string reason;  // "title" or "images" when rejected
};

// Rejects a product whose images all fail to decode or whose title has no
// character other than punctuation and whitespace.
Validation validate_item(const ProductRecord& product);

// MIEM: one feature per product. I2I: one feature per decodable image.
enum class JobKind { kMiem, kI2I };

const char* job_kind_name(JobKind kind);

// One embeddable unit of the catalog.
struct FeatureUnit {
  std::string key;
  std::uint64_t hash = 0;
  std::size_t product = 0;  // index into the snapshot
  std::optional<std::size_t> image;  // I2I only: index among the product's images
};

std::vector<FeatureUnit> feature_units(const CatalogSnapshot& catalog, JobKind kind);

// Copies entries whose key is still in the catalog with the same content
// hash. Nothing is copied when the model hash differs.
FeaturePartition copy_forward(const FeaturePartition& prev, const CatalogSnapshot& catalog,
                              JobKind kind, const std::string& model_hash);

using Embedder = std::function<std::vector<float>(const ProductRecord&, const FeatureUnit&)>;

// Query tower for I2I units, fused item embedding for MIEM units.
Embedder model_embedder(const towers::TowerModel& model, JobKind kind);

struct EmbedFailure {
  std::string key;
  std::string reason;

  bool operator==(const EmbedFailure&) const = default;
};

struct EmbedResult {
  FeaturePartition partition;
  std::vector<EmbedFailure> failures;
  std::size_t embedded = 0;
};

// Embeds units missing from `partial` (stamped `embed_ts`). Invalid products
// and embedder exceptions are listed as failures; the job continues.
EmbedResult embed_new_items(const CatalogSnapshot& catalog, FeaturePartition partial, JobKind kind,
                            const Embedder& embed, std::int64_t embed_ts);

// Deletes (keys only in prev) then updates (new keys or changed
// embeddings), each sorted by key.
std::vector<IndexCommand> diff_partitions(const FeaturePartition& prev, const FeaturePartition& curr);

struct ApplyReport {
  std::size_t deleted = 0;
  std::size_t updated = 0;
  std::size_t unchanged = 0;  // update whose live vector already matches
  std::vector<std::string> warnings;
};

// Deletes then updates. Deleting an unknown key only warns; an update whose
// normalized vector equals the live one is skipped, so replays leave the
// index unchanged.
ApplyReport apply_commands(ann::ConcurrentIndex& index, const std::vector<IndexCommand>& commands);

// Fresh index over a partition, inserted in key order.
ann::HnswIndex build_index_from_partition(const FeaturePartition& partition,
                                          const ann::HnswConfig& cfg);

struct DailyJobConfig {
  JobKind kind = JobKind::kMiem;
  bool bootstrap = false;  // allow a first day with no previous partition
  std::size_t retention = 7;
};

struct DailyReport {
  std::string day;
  std::string previous_day;
  std::size_t copied = 0;
  std::size_t embedded = 0;
  std::size_t skipped = 0;
  std::size_t deleted = 0;
  std::size_t updated = 0;
  double seconds = 0.0;
  std::vector<EmbedFailure> failures;
  std::vector<std::string> warnings;
  std::vector<std::string> removed_days;
  std::string stage;  // last stage reached
};

struct DailyResult {
  FeaturePartition partition;
  std::vector<IndexCommand> commands;
  DailyReport report;
};

class DailyJobError : public std::runtime_error {
 public:
  DailyJobError(const std::string& what, DailyReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const DailyReport& report() const { return report_; }

 private:
  DailyReport report_;
};

// Embed timestamp used for a day key "YYYY-MM-DD": midnight UTC.
std::int64_t day_timestamp(const std::string& day);

// copy_forward -> embed_new_items -> diff_partitions -> apply_commands under
// an exclusive lock on the store. Re-running a day rewrites the same
// partition and commands. Throws StateError without a previous partition
// (unless bootstrapping) or while another job holds the lock, and
// DailyJobError carrying the partial report when a stage fails.
DailyResult daily_job(const std::string& day, const CatalogSnapshot& catalog,
                      PartitionStore& store, const Embedder& embed, const std::string& model_hash,
                      ann::ConcurrentIndex& index, const DailyJobConfig& cfg);

// Hex FNV-1a of the serialized checkpoint.
std::string model_hash(const towers::TowerModel& model);

std::string daily_report_json(const DailyReport& report);

}  // namespace mmr::lifecycle
