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

#include "mmr/lifecycle/partition.h"

namespace mmr::lifecycle {

struct ChurnStats {
  std::size_t deleted = 0;
  std::size_t edited = 0;
  std::size_t added = 0;
};

// Next day's snapshot: round(fraction * size) products change, split evenly
// between deletions, title edits and additions drawn in order from `pool`
// (ids not already used). `cursor` tracks consumption of the pool.
CatalogSnapshot churn_catalog(const CatalogSnapshot& prev, const Catalog& pool, std::size_t& cursor,
                              double fraction, const std::string& day, std::uint64_t seed,
                              ChurnStats* stats = nullptr);

}  // namespace mmr::lifecycle
