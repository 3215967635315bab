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
#include <string>
#include <vector>

#include "mmr/common/catalog.h"
#include "mmr/common/image.h"

namespace mmr::trainer {

enum class Relation { kIdentical, kSimilar, kNoise };

const char* relation_name(Relation r);
Relation parse_relation(const std::string& name);

struct ClickLogTriplet {
  GrayImage query_image;
  std::string product_id;
  std::string clicked_title;
  std::vector<GrayImage> clicked_images;
  std::int64_t class_id = 0;
  Relation relation = Relation::kIdentical;
};

struct EvalQuery {
  GrayImage image;
  std::vector<std::string> truth;  // product ids of the same physical item
  std::int64_t category = 0;
};

struct SyntheticCatalogSpec {
  std::size_t classes = 200;
  std::size_t items_per_class = 10;
  std::size_t min_images = 1;
  std::size_t max_images = 7;
  std::size_t vocab_size = 1000;  // distinct synthetic words
  double identical_share = 0.45;
  double similar_share = 0.50;
  double noise_share = 0.05;
  std::size_t logs_per_item = 1;
  std::size_t eval_queries = 500;
  double duplicate_fraction = 0.05;  // extra ids re-listing an existing item
  bool confusable_pairs = true;      // classes come in visually similar twins
  double clutter_share = 0.0;        // catalog shots blended with another product
  double clutter_strength = 0.6;     // upper bound of the blend weight
  std::size_t image_size = 16;
  std::uint64_t seed = 1;

  // Throws DomainError unless shares sum to 1 and counts are positive.
  void validate() const;
};

struct SyntheticCorpus {
  Catalog catalog;
  std::vector<ClickLogTriplet> logs;
  std::vector<EvalQuery> eval_queries;
  std::map<std::string, std::int64_t> latent_item;  // product id -> physical item
};

SyntheticCorpus generate_synthetic_logs(const SyntheticCatalogSpec& spec);

// Files: catalog.jsonl, logs.jsonl, eval_queries.jsonl, latent_items.json.
void save_corpus(const SyntheticCorpus& corpus, const std::string& dir);
SyntheticCorpus load_corpus(const std::string& dir);

// Resolves product ids of log lines against a catalog.
std::vector<ClickLogTriplet> load_logs(const std::string& path, const Catalog& catalog);

}  // namespace mmr::trainer
