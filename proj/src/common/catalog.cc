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

#include "mmr/common/catalog.h"

#include <json.hpp>
#include <sstream>

#include "mmr/common/binary_io.h"
#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"

namespace mmr {

using nlohmann::json;

std::vector<GrayImage> decode_images(const ProductRecord& product) {
  std::vector<GrayImage> out;
  for (const auto& bytes : product.images) {
    if (auto img = decode_pgm(bytes)) out.push_back(std::move(*img));
  }
  return out;
}

std::string catalog_to_jsonl(const Catalog& catalog) {
  std::string out;
  for (const auto& p : catalog) {
    json images = json::array();
    for (const auto& img : p.images) images.push_back(base64_encode(img));
    json j = {{"product_id", p.product_id}, {"title", p.title},
              {"images", images},           {"category", p.category},
              {"popularity", p.popularity}, {"available", p.available}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

Catalog catalog_from_jsonl(const std::string& text) {
  Catalog out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      ProductRecord p;
      p.product_id = j.at("product_id").get<std::string>();
      p.title = j.at("title").get<std::string>();
      for (const auto& img : j.at("images")) {
        auto bytes = base64_decode(img.get<std::string>());
        if (!bytes) throw FormatError("bad base64 image");
        p.images.push_back(std::move(*bytes));
      }
      p.category = j.at("category").get<std::int64_t>();
      p.popularity = j.value("popularity", 0.0);
      p.available = j.value("available", true);
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError("catalog line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void save_catalog(const Catalog& catalog, const std::string& path) {
  write_file(path, catalog_to_jsonl(catalog));
}

Catalog load_catalog(const std::string& path) { return catalog_from_jsonl(read_file(path)); }

std::map<std::string, std::size_t> index_by_id(const Catalog& catalog) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    if (!out.emplace(catalog[i].product_id, i).second) {
      throw ConsistencyError("duplicate product id " + catalog[i].product_id);
    }
  }
  return out;
}

}  // namespace mmr
