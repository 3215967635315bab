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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmr/common/catalog.h"

namespace mmr::lifecycle {

struct FeatureEntry {
  std::uint64_t content_hash = 0;
  std::vector<float> embedding;
  std::int64_t embed_ts = 0;  // seconds since the epoch

  bool operator==(const FeatureEntry&) const = default;
};

// One day's feature table: key -> entry, keys sorted. MIEM partitions are
// keyed by product id, I2I partitions by "<product_id>#<image index>".
struct FeaturePartition {
  std::string day;
  std::string model_hash;
  std::map<std::string, FeatureEntry> entries;

  bool operator==(const FeaturePartition&) const = default;
};

struct CatalogSnapshot {
  std::string day;
  Catalog products;
};

enum class CommandKind { kDelete, kUpdate };

struct IndexCommand {
  CommandKind kind = CommandKind::kUpdate;
  std::string key;
  std::vector<float> embedding;  // update only

  bool operator==(const IndexCommand&) const = default;
};

// FNV-1a over the length-prefixed title and image bytes.
std::uint64_t content_hash(const ProductRecord& product);
// FNV-1a over one image's bytes.
std::uint64_t image_hash(const std::string& image_bytes);

// Binary record file: magic "MMRP", version, count, then records sorted by
// key: u32 key length, key bytes, u64 hash, u32 dim, f32[dim], i64 timestamp.
std::string serialize_records(const FeaturePartition& partition);
// Throws FormatError on malformed or unsorted input.
std::map<std::string, FeatureEntry> deserialize_records(std::string_view bytes);

// Command file: one JSON object per line {kind, product_id, embedding?}.
std::string commands_to_jsonl(const std::vector<IndexCommand>& commands);
std::vector<IndexCommand> commands_from_jsonl(const std::string& text);

// Directory of day partitions: <root>/<day>/{manifest.json, records.bin,
// commands.jsonl}. The manifest is {day, record_file, count,
// model_checkpoint_hash}. Day keys sort lexicographically (YYYY-MM-DD).
class PartitionStore {
 public:
  explicit PartitionStore(std::string root);

  const std::string& root() const { return root_; }
  std::vector<std::string> days() const;
  bool has(const std::string& day) const;
  // Latest day strictly before `day`.
  std::optional<std::string> previous(const std::string& day) const;
  // Throws NotFoundError / FormatError.
  FeaturePartition load(const std::string& day) const;
  // Writes records then the manifest, each through a temp file and rename.
  void save(const FeaturePartition& partition) const;
  void save_commands(const std::string& day, const std::vector<IndexCommand>& commands) const;
  std::vector<IndexCommand> load_commands(const std::string& day) const;
  // Deletes the oldest partitions so at most `keep` remain; returns them.
  std::vector<std::string> apply_retention(std::size_t keep) const;

 private:
  std::string dir(const std::string& day) const;

  std::string root_;
};

}  // namespace mmr::lifecycle
