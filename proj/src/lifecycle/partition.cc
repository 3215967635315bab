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

#include "mmr/lifecycle/partition.h"

#include <algorithm>
#include <filesystem>
#include <json.hpp>

#include "mmr/common/binary_io.h"
#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"

namespace mmr::lifecycle {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr char kMagic[4] = {'M', 'M', 'R', 'P'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kRecordFile = "records.bin";
constexpr const char* kManifest = "manifest.json";
constexpr const char* kCommands = "commands.jsonl";

void write_atomic(const fs::path& path, std::string_view bytes) {
  const fs::path tmp = path.string() + ".tmp";
  write_file(tmp.string(), bytes);
  fs::rename(tmp, path);
}

}  // namespace

std::uint64_t content_hash(const ProductRecord& product) {
  Fnv1a64 h;
  auto field = [&](std::string_view bytes) {
    const auto n = static_cast<std::uint64_t>(bytes.size());
    h.update(std::string_view(reinterpret_cast<const char*>(&n), sizeof n));
    h.update(bytes);
  };
  field(product.title);
  for (const auto& img : product.images) field(img);
  return h.digest();
}

std::uint64_t image_hash(const std::string& image_bytes) {
  return Fnv1a64().update(image_bytes).digest();
}

std::string serialize_records(const FeaturePartition& partition) {
  BinaryWriter w;
  w.put_raw(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(partition.entries.size());
  for (const auto& [key, e] : partition.entries) {
    w.put_string(key);
    w.put<std::uint64_t>(e.content_hash);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.embedding.size()));
    w.put_array(std::span<const float>(e.embedding));
    w.put<std::int64_t>(e.embed_ts);
  }
  return w.release();
}

std::map<std::string, FeatureEntry> deserialize_records(std::string_view bytes) {
  BinaryReader r(bytes);
  if (r.get_raw(4) != std::string_view(kMagic, 4)) throw FormatError("records: bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw FormatError("records: unsupported version");
  const auto count = r.get<std::uint64_t>();
  if (count > r.remaining()) throw FormatError("records: count exceeds payload");
  std::map<std::string, FeatureEntry> out;
  std::string last;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string key = r.get_string();
    if (i > 0 && !(last < key)) throw FormatError("records: keys not strictly sorted");
    FeatureEntry e;
    e.content_hash = r.get<std::uint64_t>();
    e.embedding = r.get_array<float>(r.get<std::uint32_t>());
    e.embed_ts = r.get<std::int64_t>();
    last = key;
    out.emplace_hint(out.end(), std::move(key), std::move(e));
  }
  if (!r.done()) throw FormatError("records: trailing bytes");
  return out;
}

std::string commands_to_jsonl(const std::vector<IndexCommand>& commands) {
  std::string out;
  for (const auto& c : commands) {
    json j{{"kind", c.kind == CommandKind::kDelete ? "delete" : "update"}, {"product_id", c.key}};
    if (c.kind == CommandKind::kUpdate) j["embedding"] = c.embedding;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<IndexCommand> commands_from_jsonl(const std::string& text) {
  std::vector<IndexCommand> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      IndexCommand c;
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "delete") {
        c.kind = CommandKind::kDelete;
      } else if (kind == "update") {
        c.kind = CommandKind::kUpdate;
        c.embedding = j.at("embedding").get<std::vector<float>>();
      } else {
        throw FormatError("commands: unknown kind '" + kind + "'");
      }
      c.key = j.at("product_id").get<std::string>();
      out.push_back(std::move(c));
    } catch (const json::exception& e) {
      throw FormatError(std::string("commands: ") + e.what());
    }
  }
  return out;
}

PartitionStore::PartitionStore(std::string root) : root_(std::move(root)) {
  fs::create_directories(root_);
}

std::string PartitionStore::dir(const std::string& day) const {
  if (day.empty() || day.find('/') != std::string::npos || day.starts_with('.')) {
    throw DomainError("invalid day key '" + day + "'");
  }
  return (fs::path(root_) / day).string();
}

std::vector<std::string> PartitionStore::days() const {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(root_)) {
    if (e.is_directory() && fs::exists(e.path() / kManifest)) out.push_back(e.path().filename().string());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool PartitionStore::has(const std::string& day) const {
  return fs::exists(fs::path(dir(day)) / kManifest);
}

std::optional<std::string> PartitionStore::previous(const std::string& day) const {
  std::optional<std::string> best;
  for (const auto& d : days()) {
    if (d < day) best = d;
  }
  return best;
}

FeaturePartition PartitionStore::load(const std::string& day) const {
  const fs::path d = dir(day);
  if (!fs::exists(d / kManifest)) throw NotFoundError("no partition for day " + day);
  json manifest;
  try {
    manifest = json::parse(read_file((d / kManifest).string()));
  } catch (const json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
  FeaturePartition p;
  try {
    p.day = manifest.at("day").get<std::string>();
    p.model_hash = manifest.at("model_checkpoint_hash").get<std::string>();
    p.entries = deserialize_records(read_file((d / manifest.at("record_file").get<std::string>()).string()));
    if (manifest.at("count").get<std::size_t>() != p.entries.size()) {
      throw FormatError("manifest count does not match records");
    }
  } catch (const json::exception& e) {
    throw FormatError("manifest: " + std::string(e.what()));
  }
  if (p.day != day) throw FormatError("manifest day " + p.day + " stored under " + day);
  return p;
}

void PartitionStore::save(const FeaturePartition& partition) const {
  const fs::path d = dir(partition.day);
  fs::create_directories(d);
  write_atomic(d / kRecordFile, serialize_records(partition));
  const json manifest{{"day", partition.day},
                      {"record_file", kRecordFile},
                      {"count", partition.entries.size()},
                      {"model_checkpoint_hash", partition.model_hash}};
  write_atomic(d / kManifest, manifest.dump(2) + "\n");
}

void PartitionStore::save_commands(const std::string& day,
                                   const std::vector<IndexCommand>& commands) const {
  const fs::path d = dir(day);
  fs::create_directories(d);
  write_atomic(d / kCommands, commands_to_jsonl(commands));
}

std::vector<IndexCommand> PartitionStore::load_commands(const std::string& day) const {
  const fs::path path = fs::path(dir(day)) / kCommands;
  if (!fs::exists(path)) throw NotFoundError("no command file for day " + day);
  return commands_from_jsonl(read_file(path.string()));
}

std::vector<std::string> PartitionStore::apply_retention(std::size_t keep) const {
  auto all = days();
  std::vector<std::string> removed;
  if (keep == 0 || all.size() <= keep) return removed;
  for (std::size_t i = 0; i + keep < all.size(); ++i) {
    fs::remove_all(dir(all[i]));
    removed.push_back(all[i]);
  }
  return removed;
}

}  // namespace mmr::lifecycle
