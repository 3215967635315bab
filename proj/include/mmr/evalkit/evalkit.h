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
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmr/annindex/hnsw.h"
#include "mmr/engine/engine.h"
#include "mmr/towers/model.h"
#include "mmr/trainer/synthetic.h"

namespace mmr::evalkit {

inline constexpr std::size_t kRecallKs[] = {1, 5, 10, 50, 100};

// 1 when any of the first k results is in the truth set. Throws DomainError
// for an empty truth set, k == 0 or duplicate results.
int recall_at_k(std::span<const std::string> results, const std::set<std::string>& truth,
                std::size_t k);

// 1 when the most common category among the first 10 results equals the
// truth category. Ties go to the tied category ranked highest. Throws
// DomainError for no results and ConsistencyError for an unknown id.
int category_accuracy(std::span<const std::string> results,
                      const std::map<std::string, std::int64_t>& category_of,
                      std::int64_t truth_category);

// Two-layer perceptron over the concatenated pair features
// [a, b, a * b, |a - b|]; outputs the probability that both embeddings show
// the same item.
class SameItemClassifier {
 public:
  SameItemClassifier(std::size_t embedding_dim, std::size_t hidden, std::uint64_t seed);

  double probability(std::span<const float> a, std::span<const float> b) const;

  struct LabeledPair {
    std::vector<float> a, b;
    bool same = false;
  };
  struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double lr = 3e-3;
    std::uint64_t seed = 1;
  };
  // Mean cross-entropy per epoch.
  std::vector<double> train(std::span<const LabeledPair> pairs, const TrainConfig& cfg);

  std::size_t embedding_dim() const { return dim_; }

 private:
  nc::Tensor logits(const nc::Tensor& features) const;

  std::size_t dim_;
  nc::Tensor w1_, b1_, w2_, b2_;
};

// Both orders of every pair. Each image gets negatives_per_image + 1
// positives (images of the same latent item, across listings and within
// one), its negatives_per_image nearest images of other items and one random
// image. Embeddings come from the query tower.
std::vector<SameItemClassifier::LabeledPair> same_item_pairs(
    const towers::TowerModel& model, const Catalog& catalog,
    const std::map<std::string, std::int64_t>& latent_item, std::size_t negatives_per_image,
    std::uint64_t seed);

struct SameItemGroups {
  std::map<std::string, std::size_t> group_of;  // product id -> group
  std::vector<std::vector<std::string>> groups;  // sorted ids, ordered by first id
  std::size_t merges = 0;                         // accepted unions across groups

  std::set<std::string> expand(std::span<const std::string> ids) const;
};

// For every image a, probes its k_probe nearest images b and unions the two
// products when p(a, b) > threshold. Keys of `image_embeddings` are I2I keys.
SameItemGroups merge_same_items(const Catalog& catalog,
                                std::span<const ann::KeyedVector> image_embeddings,
                                const SameItemClassifier& classifier, std::size_t k_probe = 10,
                                double threshold = 0.5);

// Per query recall candidates from both indexes, fetched once so that
// fusion weights can be compared cheaply.
struct QueryCandidates {
  std::vector<engine::RecallCandidate> i2i;
  std::vector<engine::RecallCandidate> miem;
};

struct EvalConfig {
  std::size_t depth = 100;  // results kept per query
  std::size_t overfetch = 3;
  std::size_t ef_search = 0;
  double fusion_weight = 1.0;
  bool one_emb_per_image = false;  // adds the per <image, title> MIEM row
  bool merge_truth = false;        // widen truth sets with same-item groups
  std::size_t threads = 1;
};

std::vector<QueryCandidates> collect_candidates(const towers::TowerModel& model,
                                                const engine::IndexPair& indexes,
                                                std::span<const trainer::EvalQuery> queries,
                                                const EvalConfig& cfg);

// Ranked product ids of one configuration.
std::vector<std::string> i2i_results(const QueryCandidates& c, std::size_t depth);
std::vector<std::string> miem_results(const QueryCandidates& c, std::size_t depth);
std::vector<std::string> fused_results(const QueryCandidates& c, double weight, std::size_t depth);

struct MetricRow {
  std::string model;
  double category_accuracy = 0.0;
  std::vector<double> recall;  // one per kRecallKs entry
};

// Averages both metrics over ranked result lists.
MetricRow score_results(const std::string& name,
                        std::span<const std::vector<std::string>> results,
                        std::span<const std::set<std::string>> truths,
                        std::span<const std::int64_t> categories,
                        const std::map<std::string, std::int64_t>& category_of);

struct SweepResult {
  double best_weight = 0.0;
  std::vector<std::pair<double, double>> curve;  // (weight, Recall@5)
};

// Recall@5 of the fused list for every weight; the best keeps the smaller
// weight on ties. Throws DomainError for an empty grid.
SweepResult sweep_fusion_weight(std::span<const QueryCandidates> candidates,
                                std::span<const std::set<std::string>> truths,
                                std::span<const double> grid, std::size_t depth = 100);

struct EvalReport {
  std::vector<MetricRow> rows;
  std::vector<std::pair<std::string, std::string>> config;
};

// Rows: I2I, MIEM, MIEM+I2I and, when enabled, MIEM (1 emb/img).
EvalReport run_offline_eval(const towers::TowerModel& model, const engine::IndexPair& indexes,
                            const Catalog& catalog, std::span<const trainer::EvalQuery> queries,
                            const EvalConfig& cfg, const SameItemGroups* groups = nullptr);

// One <image, title> embedding per decodable image, keyed like I2I.
ann::HnswIndex build_per_image_miem_index(const towers::TowerModel& model, const Catalog& catalog,
                                          const ann::HnswConfig& cfg);

std::string report_csv(const EvalReport& report);
std::string report_text(const EvalReport& report);

}  // namespace mmr::evalkit
