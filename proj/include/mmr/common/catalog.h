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

#include "mmr/common/image.h"

namespace mmr {

// One catalog product. Images are kept as encoded PGM bytes so unreadable
// uploads survive until validation.
struct ProductRecord {
  std::string product_id;
  std::string title;
  std::vector<std::string> images;
  std::int64_t category = 0;
  double popularity = 0.0;
  bool available = true;

  bool operator==(const ProductRecord&) const = default;
};

using Catalog = std::vector<ProductRecord>;

// Decoded images in catalog order; undecodable entries are dropped.
std::vector<GrayImage> decode_images(const ProductRecord& product);

// JSON lines, one product per line, images base64-encoded.
std::string catalog_to_jsonl(const Catalog& catalog);
Catalog catalog_from_jsonl(const std::string& text);
void save_catalog(const Catalog& catalog, const std::string& path);
Catalog load_catalog(const std::string& path);

// product_id -> record position; throws ConsistencyError on duplicate ids.
std::map<std::string, std::size_t> index_by_id(const Catalog& catalog);

}  // namespace mmr
