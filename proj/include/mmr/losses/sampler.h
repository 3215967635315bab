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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mmr/common/rng.h"

namespace mmr::losses {

struct SampledBatch {
  std::int64_t class_id = 0;        // class the batch was built for
  std::vector<std::size_t> indices; // dataset positions
  std::vector<bool> filler;         // true where the item came from another class

  bool has_filler() const;
};

// One epoch of class-homogeneous minibatches over a labelled dataset.
//
// Each class is shuffled and cut into full batches. A class's remainder
// becomes one batch, topped up with not-yet-placed items drawn from uniformly
// random other classes. Every dataset position is placed exactly once, so a
// remainder batch stays short when no unplaced items are left elsewhere.
// Batch order is shuffled. Throws DomainError for an empty dataset or
// batch_size < 2.
std::vector<SampledBatch> class_based_batches(std::span<const std::int64_t> labels,
                                              std::size_t batch_size, Rng& rng);

}  // namespace mmr::losses
