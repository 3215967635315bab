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

#include "mmr/losses/sampler.h"

#include <algorithm>
#include <deque>
#include <map>

#include "mmr/common/errors.h"

namespace mmr::losses {

bool SampledBatch::has_filler() const {
  return std::find(filler.begin(), filler.end(), true) != filler.end();
}

std::vector<SampledBatch> class_based_batches(std::span<const std::int64_t> labels,
                                              std::size_t batch_size, Rng& rng) {
  if (labels.empty()) throw DomainError("class_based_batches: empty dataset");
  if (batch_size < 2) throw DomainError("class_based_batches: batch_size < 2");

  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  std::vector<SampledBatch> batches;
  std::vector<std::int64_t> classes;
  std::map<std::int64_t, std::deque<std::size_t>> remainder;
  for (auto& [cls, members] : by_class) {
    classes.push_back(cls);
    rng.shuffle(members);
    std::size_t pos = 0;
    for (; pos + batch_size <= members.size(); pos += batch_size) {
      SampledBatch b;
      b.class_id = cls;
      b.indices.assign(members.begin() + pos, members.begin() + pos + batch_size);
      b.filler.assign(batch_size, false);
      batches.push_back(std::move(b));
    }
    if (pos < members.size()) {
      remainder[cls].assign(members.begin() + pos, members.end());
    }
  }

  for (std::int64_t cls : classes) {
    auto it = remainder.find(cls);
    if (it == remainder.end() || it->second.empty()) continue;
    SampledBatch b;
    b.class_id = cls;
    for (std::size_t idx : it->second) {
      b.indices.push_back(idx);
      b.filler.push_back(false);
    }
    it->second.clear();
    while (b.indices.size() < batch_size) {
      std::vector<std::int64_t> donors;
      for (const auto& [other, items] : remainder) {
        if (other != cls && !items.empty()) donors.push_back(other);
      }
      if (donors.empty()) break;
      auto& pool = remainder[donors[rng.below(donors.size())]];
      b.indices.push_back(pool.front());
      b.filler.push_back(true);
      pool.pop_front();
    }
    batches.push_back(std::move(b));
  }

  rng.shuffle(batches);
  return batches;
}

}  // namespace mmr::losses
