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

#include "mmr/lifecycle/simulate.h"

#include <cmath>
#include <set>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"

namespace mmr::lifecycle {

CatalogSnapshot churn_catalog(const CatalogSnapshot& prev, const Catalog& pool, std::size_t& cursor,
                              double fraction, const std::string& day, std::uint64_t seed,
                              ChurnStats* stats) {
  if (fraction < 0.0 || fraction > 1.0) throw DomainError("churn fraction must be in [0, 1]");
  Rng rng(seed);
  const auto changes = static_cast<std::size_t>(std::llround(fraction * prev.products.size()));
  const std::size_t n_delete = changes / 3;
  const std::size_t n_edit = changes / 3;
  const std::size_t n_add = changes - n_delete - n_edit;

  std::vector<std::size_t> order(prev.products.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::set<std::size_t> deleted(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_delete));
  std::set<std::size_t> edited(order.begin() + static_cast<std::ptrdiff_t>(n_delete),
                               order.begin() + static_cast<std::ptrdiff_t>(n_delete + n_edit));

  CatalogSnapshot next;
  next.day = day;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < prev.products.size(); ++i) {
    if (deleted.contains(i)) continue;
    auto p = prev.products[i];
    if (edited.contains(i)) p.title += " edition " + std::to_string(rng.below(1000000));
    ids.insert(p.product_id);
    next.products.push_back(std::move(p));
  }
  std::size_t added = 0;
  while (added < n_add) {
    if (cursor >= pool.size()) throw DomainError("churn pool exhausted");
    const auto& p = pool[cursor++];
    if (ids.contains(p.product_id)) continue;
    ids.insert(p.product_id);
    next.products.push_back(p);
    ++added;
  }
  if (stats) *stats = {n_delete, n_edit, added};
  return next;
}

}  // namespace mmr::lifecycle
