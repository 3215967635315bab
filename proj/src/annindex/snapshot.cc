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
#include "mmr/common/binary_io.h"
#include "mmr/common/errors.h"

namespace mmr::ann {
namespace {

constexpr char kMagic[4] = {'M', 'M', 'R', 'H'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string HnswIndex::serialize() const {
  BinaryWriter w;
  w.put_raw(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(cfg_.dim);
  w.put<std::uint64_t>(cfg_.m);
  w.put<std::uint64_t>(cfg_.ef_construction);
  w.put<std::uint64_t>(cfg_.ef_search);
  w.put<std::uint64_t>(cfg_.seed);
  w.put<double>(cfg_.rebuild_ratio);
  w.put<std::uint64_t>(nodes_.size());
  w.put<std::uint64_t>(live_);
  w.put<std::uint64_t>(deleted_);
  w.put<std::int64_t>(entry_);
  w.put<std::int32_t>(max_level_);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    w.put_string(n.key);
    w.put<std::uint8_t>(n.deleted ? 1 : 0);
    w.put<std::int32_t>(n.level);
    w.put_array(std::span<const float>(data(static_cast<std::uint32_t>(i)), cfg_.dim));
    for (const auto& links : n.links) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(links.size()));
      w.put_array(std::span<const std::uint32_t>(links));
    }
  }
  return w.release();
}

HnswIndex HnswIndex::deserialize(std::string_view bytes) {
  BinaryReader r(bytes);
  if (r.get_raw(4) != std::string_view(kMagic, 4)) throw FormatError("index snapshot: bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw FormatError("index snapshot: unsupported version");
  HnswConfig cfg;
  cfg.dim = r.get<std::uint64_t>();
  cfg.m = r.get<std::uint64_t>();
  cfg.ef_construction = r.get<std::uint64_t>();
  cfg.ef_search = r.get<std::uint64_t>();
  cfg.seed = r.get<std::uint64_t>();
  cfg.rebuild_ratio = r.get<double>();
  HnswIndex index = [&] {
    try {
      return HnswIndex(cfg);
    } catch (const DomainError& e) {
      throw FormatError(std::string("index snapshot: ") + e.what());
    }
  }();
  const auto count = r.get<std::uint64_t>();
  index.live_ = r.get<std::uint64_t>();
  index.deleted_ = r.get<std::uint64_t>();
  index.entry_ = r.get<std::int64_t>();
  index.max_level_ = r.get<std::int32_t>();
  if (count > r.remaining()) throw FormatError("index snapshot: node count exceeds payload");
  index.nodes_.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Node n;
    n.key = r.get_string();
    const auto flag = r.get<std::uint8_t>();
    if (flag > 1) throw FormatError("index snapshot: bad tombstone flag");
    n.deleted = flag == 1;
    n.level = r.get<std::int32_t>();
    if (n.level < 0 || n.level > 64) throw FormatError("index snapshot: bad level");
    const auto vec = r.get_array<float>(cfg.dim);
    index.vectors_.insert(index.vectors_.end(), vec.begin(), vec.end());
    n.links.resize(static_cast<std::size_t>(n.level) + 1);
    for (auto& links : n.links) links = r.get_array<std::uint32_t>(r.get<std::uint32_t>());
    if (!n.deleted && !index.live_ids_.emplace(n.key, static_cast<std::uint32_t>(i)).second) {
      throw FormatError("index snapshot: duplicate live key '" + n.key + "'");
    }
    index.nodes_.push_back(std::move(n));
  }
  if (!r.done()) throw FormatError("index snapshot: trailing bytes");
  try {
    index.check_invariants();
  } catch (const ConsistencyError& e) {
    throw FormatError(std::string("index snapshot: ") + e.what());
  }
  return index;
}

}  // namespace mmr::ann
