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

#include "mmr/evalkit/evalkit.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/trainer/adamw.h"

namespace mmr::evalkit {
namespace {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

nc::Tensor init_weight(std::size_t in, std::size_t out, Rng& rng) {
  std::vector<double> w(in * out);
  const double s = std::sqrt(2.0 / static_cast<double>(in + out));
  for (auto& x : w) x = rng.normal(0.0, s);
  return nc::Tensor::from({in, out}, std::move(w), true);
}

void append_features(std::span<const float> a, std::span<const float> b, std::size_t dim,
                     std::vector<double>& out) {
  if (a.size() != dim || b.size() != dim) throw ShapeError("classifier: pair dim mismatch");
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  for (std::size_t i = 0; i < dim; ++i) out.push_back(double{a[i]} * b[i]);
  for (std::size_t i = 0; i < dim; ++i) out.push_back(std::abs(double{a[i]} - b[i]));
}

nc::Tensor pair_features(std::span<const SameItemClassifier::LabeledPair* const> pairs,
                         std::size_t dim) {
  std::vector<double> v;
  v.reserve(pairs.size() * 4 * dim);
  for (const auto* p : pairs) append_features(p->a, p->b, dim, v);
  return nc::Tensor::from({pairs.size(), 4 * dim}, std::move(v));
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) x = parent_[x] = parent_[parent_[x]];
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent_[std::max(a, b)] = std::min(a, b);
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
};

std::vector<ann::KeyedVector> image_embeddings(const towers::TowerModel& model,
                                               const Catalog& catalog) {
  std::vector<ann::KeyedVector> out;
  for (const auto& p : catalog) {
    if (!p.available) continue;
    const auto images = decode_images(p);
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.push_back({engine::i2i_key(p.product_id, i), model.query_embedding(images[i])});
    }
  }
  return out;
}

std::vector<std::string> ids_of(std::span<const engine::RecallCandidate> c, std::size_t depth) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < c.size() && i < depth; ++i) out.push_back(c[i].product_id);
  return out;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", x);
  return buf;
}

}  // namespace

int recall_at_k(std::span<const std::string> results, const std::set<std::string>& truth,
                std::size_t k) {
  if (truth.empty()) throw DomainError("recall_at_k: empty truth set");
  if (k == 0) throw DomainError("recall_at_k: k must be >= 1");
  std::unordered_set<std::string> seen;
  for (const auto& r : results) {
    if (!seen.insert(r).second) throw DomainError("recall_at_k: duplicate result '" + r + "'");
  }
  const std::size_t n = std::min(k, results.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (truth.contains(results[i])) return 1;
  }
  return 0;
}

int category_accuracy(std::span<const std::string> results,
                      const std::map<std::string, std::int64_t>& category_of,
                      std::int64_t truth_category) {
  if (results.empty()) throw DomainError("category_accuracy: no results");
  const std::size_t n = std::min<std::size_t>(10, results.size());
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> tally;  // count, first rank
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = category_of.find(results[i]);
    if (it == category_of.end()) throw ConsistencyError("category_accuracy: unknown id '" + results[i] + "'");
    auto [t, fresh] = tally.try_emplace(it->second, 0, i);
    ++t->second.first;
  }
  std::int64_t best = 0;
  std::size_t best_count = 0, best_rank = 0;
  for (const auto& [cat, cr] : tally) {
    if (cr.first > best_count || (cr.first == best_count && cr.second < best_rank)) {
      best = cat;
      best_count = cr.first;
      best_rank = cr.second;
    }
  }
  return best == truth_category ? 1 : 0;
}

SameItemClassifier::SameItemClassifier(std::size_t embedding_dim, std::size_t hidden,
                                       std::uint64_t seed)
    : dim_(embedding_dim) {
  if (embedding_dim == 0 || hidden == 0) throw DomainError("classifier: sizes must be positive");
  Rng rng(seed);
  w1_ = init_weight(4 * embedding_dim, hidden, rng);
  b1_ = nc::Tensor::zeros({1, hidden}, true);
  w2_ = init_weight(hidden, 2, rng);
  b2_ = nc::Tensor::zeros({1, 2}, true);
}

nc::Tensor SameItemClassifier::logits(const nc::Tensor& features) const {
  return nc::linear(nc::gelu(nc::linear(features, w1_, b1_)), w2_, b2_);
}

double SameItemClassifier::probability(std::span<const float> a, std::span<const float> b) const {
  nc::NoGradGuard guard;
  std::vector<double> v;
  append_features(a, b, dim_, v);
  const auto z = logits(nc::Tensor::from({1, 4 * dim_}, std::move(v)));
  return 1.0 / (1.0 + std::exp(z.at(0, 0) - z.at(0, 1)));
}

std::vector<double> SameItemClassifier::train(std::span<const LabeledPair> pairs,
                                              const TrainConfig& cfg) {
  if (pairs.empty()) throw DomainError("classifier: no training pairs");
  if (cfg.batch_size == 0) throw DomainError("classifier: batch size must be positive");
  std::vector<nc::Tensor> params{w1_, b1_, w2_, b2_};
  trainer::AdamWState state;
  trainer::AdamWConfig opt;
  opt.lr = cfg.lr;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - s);
      std::vector<const LabeledPair*> batch;
      std::vector<std::size_t> targets;
      for (std::size_t i = 0; i < n; ++i) {
        batch.push_back(&pairs[order[s + i]]);
        targets.push_back(pairs[order[s + i]].same ? 1 : 0);
      }
      for (auto& p : params) p.zero_grad();
      const auto loss = nc::cross_entropy_rows(logits(pair_features(batch, dim_)), targets);
      loss.backward();
      trainer::adamw_step(params, state, opt);
      total += loss.item();
      ++batches;
    }
    curve.push_back(total / static_cast<double>(batches));
  }
  return curve;
}

std::vector<SameItemClassifier::LabeledPair> same_item_pairs(
    const towers::TowerModel& model, const Catalog& catalog,
    const std::map<std::string, std::int64_t>& latent_item, std::size_t negatives_per_image,
    std::uint64_t seed) {
  const auto embeddings = image_embeddings(model, catalog);
  std::vector<std::int64_t> item(embeddings.size());
  std::map<std::int64_t, std::vector<std::size_t>> members;
  std::int64_t next_private = -1;
  std::map<std::string, std::int64_t> private_item;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto pid = engine::parse_i2i_key(embeddings[i].key).first;
    const auto it = latent_item.find(pid);
    if (it != latent_item.end()) {
      item[i] = it->second;
    } else {
      auto [p, fresh] = private_item.try_emplace(pid, next_private);
      if (fresh) --next_private;
      item[i] = p->second;
    }
    members[item[i]].push_back(i);
  }
  ann::HnswConfig hc;
  hc.dim = model.config().output_dim;
  hc.seed = seed;
  ann::HnswIndex index(hc);
  for (const auto& e : embeddings) index.insert(e.key, e.vec);
  std::map<std::string, std::size_t> at;
  for (std::size_t i = 0; i < embeddings.size(); ++i) at[embeddings[i].key] = i;

  Rng rng(seed);
  std::vector<SameItemClassifier::LabeledPair> out;
  auto add = [&](std::size_t a, std::size_t b, bool same) {
    out.push_back({embeddings[a].vec, embeddings[b].vec, same});
    out.push_back({embeddings[b].vec, embeddings[a].vec, same});
  };
  for (std::size_t a = 0; a < embeddings.size(); ++a) {
    const auto& group = members[item[a]];
    for (std::size_t i = 0; group.size() > 1 && i <= negatives_per_image; ++i) {
      std::size_t b = a;
      while (b == a) b = group[rng.below(group.size())];
      add(a, b, true);
    }
    std::size_t hard = 0;
    for (const auto& h : index.search(embeddings[a].vec, negatives_per_image + group.size() + 1)) {
      if (hard == negatives_per_image) break;
      const std::size_t b = at.at(h.key);
      if (item[b] == item[a]) continue;
      add(a, b, false);
      ++hard;
    }
    const std::size_t r = rng.below(embeddings.size());
    if (item[r] != item[a]) add(a, r, false);
  }
  return out;
}

std::set<std::string> SameItemGroups::expand(std::span<const std::string> ids) const {
  std::set<std::string> out(ids.begin(), ids.end());
  for (const auto& id : ids) {
    const auto it = group_of.find(id);
    if (it == group_of.end()) continue;
    out.insert(groups[it->second].begin(), groups[it->second].end());
  }
  return out;
}

SameItemGroups merge_same_items(const Catalog& catalog,
                                std::span<const ann::KeyedVector> image_embeddings,
                                const SameItemClassifier& classifier, std::size_t k_probe,
                                double threshold) {
  std::map<std::string, std::size_t> product;
  std::vector<std::string> ids;
  for (const auto& p : catalog) {
    if (product.emplace(p.product_id, ids.size()).second) ids.push_back(p.product_id);
  }
  std::vector<std::size_t> owner(image_embeddings.size());
  for (std::size_t i = 0; i < image_embeddings.size(); ++i) {
    const auto pid = engine::parse_i2i_key(image_embeddings[i].key).first;
    const auto it = product.find(pid);
    if (it == product.end()) throw ConsistencyError("merge: image of unknown product '" + pid + "'");
    owner[i] = it->second;
  }
  UnionFind uf(ids.size());
  SameItemGroups out;
  if (!image_embeddings.empty() && k_probe > 0) {
    ann::HnswConfig hc;
    hc.dim = classifier.embedding_dim();
    ann::HnswIndex index(hc);
    std::map<std::string, std::size_t> at;
    for (std::size_t i = 0; i < image_embeddings.size(); ++i) {
      index.insert(image_embeddings[i].key, image_embeddings[i].vec);
      at[image_embeddings[i].key] = i;
    }
    for (std::size_t a = 0; a < image_embeddings.size(); ++a) {
      for (const auto& h : index.search(image_embeddings[a].vec, k_probe + 1)) {
        const std::size_t b = at.at(h.key);
        if (b == a || owner[b] == owner[a]) continue;
        if (classifier.probability(image_embeddings[a].vec, image_embeddings[b].vec) > threshold &&
            uf.unite(owner[a], owner[b])) {
          ++out.merges;
        }
      }
    }
  }
  std::map<std::size_t, std::size_t> group_at;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto [it, fresh] = group_at.try_emplace(uf.find(i), out.groups.size());
    if (fresh) out.groups.emplace_back();
    out.groups[it->second].push_back(ids[i]);
    out.group_of[ids[i]] = it->second;
  }
  for (auto& g : out.groups) std::sort(g.begin(), g.end());
  return out;
}

std::vector<QueryCandidates> collect_candidates(const towers::TowerModel& model,
                                                const engine::IndexPair& indexes,
                                                std::span<const trainer::EvalQuery> queries,
                                                const EvalConfig& cfg) {
  if (cfg.depth == 0) throw DomainError("eval: depth must be >= 1");
  std::vector<QueryCandidates> out(queries.size());
  parallel_for(queries.size(), cfg.threads, [&](std::size_t i) {
    const auto q = model.query_embedding(queries[i].image);
    const auto i2i = indexes.i2i.search(q, cfg.depth * std::max<std::size_t>(1, cfg.overfetch), cfg.ef_search);
    const auto miem = indexes.miem.search(q, cfg.depth, cfg.ef_search);
    out[i].i2i = engine::dedup_recall(i2i, cfg.depth, engine::Source::kI2I);
    out[i].miem = engine::dedup_recall(miem, cfg.depth, engine::Source::kMiem);
  });
  return out;
}

std::vector<std::string> i2i_results(const QueryCandidates& c, std::size_t depth) {
  return ids_of(c.i2i, depth);
}

std::vector<std::string> miem_results(const QueryCandidates& c, std::size_t depth) {
  return ids_of(c.miem, depth);
}

std::vector<std::string> fused_results(const QueryCandidates& c, double weight, std::size_t depth) {
  std::vector<std::string> out;
  for (const auto& f : engine::fuse_scores(c.i2i, c.miem, weight)) {
    if (out.size() == depth) break;
    out.push_back(f.product_id);
  }
  return out;
}

MetricRow score_results(const std::string& name,
                        std::span<const std::vector<std::string>> results,
                        std::span<const std::set<std::string>> truths,
                        std::span<const std::int64_t> categories,
                        const std::map<std::string, std::int64_t>& category_of) {
  if (results.size() != truths.size() || results.size() != categories.size()) {
    throw ShapeError("score_results: results, truths and categories differ in length");
  }
  MetricRow row;
  row.model = name;
  row.recall.assign(std::size(kRecallKs), 0.0);
  if (results.empty()) return row;
  for (std::size_t q = 0; q < results.size(); ++q) {
    if (!results[q].empty()) row.category_accuracy += category_accuracy(results[q], category_of, categories[q]);
    for (std::size_t j = 0; j < std::size(kRecallKs); ++j) {
      row.recall[j] += recall_at_k(results[q], truths[q], kRecallKs[j]);
    }
  }
  const double n = static_cast<double>(results.size());
  row.category_accuracy /= n;
  for (auto& r : row.recall) r /= n;
  return row;
}

SweepResult sweep_fusion_weight(std::span<const QueryCandidates> candidates,
                                std::span<const std::set<std::string>> truths,
                                std::span<const double> grid, std::size_t depth) {
  if (grid.empty()) throw DomainError("sweep: empty weight grid");
  if (candidates.size() != truths.size()) throw ShapeError("sweep: candidates and truths differ in length");
  SweepResult out;
  double best = -1.0;
  for (const double w : grid) {
    double hits = 0.0;
    for (std::size_t q = 0; q < candidates.size(); ++q) {
      hits += recall_at_k(fused_results(candidates[q], w, depth), truths[q], 5);
    }
    const double r = candidates.empty() ? 0.0 : hits / static_cast<double>(candidates.size());
    out.curve.emplace_back(w, r);
    if (r > best || (r == best && w < out.best_weight)) {
      best = r;
      out.best_weight = w;
    }
  }
  return out;
}

ann::HnswIndex build_per_image_miem_index(const towers::TowerModel& model, const Catalog& catalog,
                                          const ann::HnswConfig& cfg) {
  ann::HnswConfig c = cfg;
  c.dim = model.config().output_dim;
  ann::HnswIndex index(c);
  for (const auto& p : catalog) {
    if (!p.available) continue;
    const auto title = towers::tokenize_title(p.title, model.config());
    const auto images = decode_images(p);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const auto input = towers::make_item_input(title, std::span(&images[i], 1), p.category, model.config());
      index.insert(engine::i2i_key(p.product_id, i), model.item_embedding(input));
    }
  }
  return index;
}

EvalReport run_offline_eval(const towers::TowerModel& model, const engine::IndexPair& indexes,
                            const Catalog& catalog, std::span<const trainer::EvalQuery> queries,
                            const EvalConfig& cfg, const SameItemGroups* groups) {
  std::map<std::string, std::int64_t> category_of;
  for (const auto& p : catalog) category_of[p.product_id] = p.category;
  std::vector<std::set<std::string>> truths;
  std::vector<std::int64_t> categories;
  for (const auto& q : queries) {
    if (q.truth.empty()) throw DomainError("eval: query with empty truth set");
    truths.push_back(cfg.merge_truth && groups ? groups->expand(q.truth)
                                               : std::set<std::string>(q.truth.begin(), q.truth.end()));
    categories.push_back(q.category);
  }
  const auto candidates = collect_candidates(model, indexes, queries, cfg);
  std::vector<std::vector<std::string>> i2i, miem, fused;
  for (const auto& c : candidates) {
    i2i.push_back(i2i_results(c, cfg.depth));
    miem.push_back(miem_results(c, cfg.depth));
    fused.push_back(fused_results(c, cfg.fusion_weight, cfg.depth));
  }
  EvalReport report;
  report.rows.push_back(score_results("I2I", i2i, truths, categories, category_of));
  report.rows.push_back(score_results("MIEM", miem, truths, categories, category_of));
  report.rows.push_back(score_results("MIEM+I2I", fused, truths, categories, category_of));
  if (cfg.one_emb_per_image) {
    const auto per_image = build_per_image_miem_index(model, catalog, indexes.miem.config());
    std::vector<std::vector<std::string>> rows(queries.size());
    parallel_for(queries.size(), cfg.threads, [&](std::size_t i) {
      const auto q = model.query_embedding(queries[i].image);
      const auto hits = per_image.search(q, cfg.depth * std::max<std::size_t>(1, cfg.overfetch), cfg.ef_search);
      rows[i] = ids_of(engine::dedup_recall(hits, cfg.depth, engine::Source::kI2I), cfg.depth);
    });
    report.rows.push_back(score_results("MIEM (1 emb/img)", rows, truths, categories, category_of));
  }
  report.config = {{"queries", std::to_string(queries.size())},
                   {"catalog", std::to_string(catalog.size())},
                   {"depth", std::to_string(cfg.depth)},
                   {"overfetch", std::to_string(cfg.overfetch)},
                   {"ef_search", std::to_string(cfg.ef_search)},
                   {"fusion_weight", fmt(cfg.fusion_weight)},
                   {"merge_truth", cfg.merge_truth && groups ? "true" : "false"}};
  return report;
}

std::string report_csv(const EvalReport& report) {
  std::string out = "model,category_accuracy";
  for (const auto k : kRecallKs) out += ",recall_at_" + std::to_string(k);
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.model + "," + fmt(r.category_accuracy);
    for (const double x : r.recall) out += "," + fmt(x);
    out += '\n';
  }
  return out;
}

std::string report_text(const EvalReport& report) {
  std::vector<std::string> header{"Model", "Category Accuracy"};
  for (const auto k : kRecallKs) header.push_back("Recall@" + std::to_string(k));
  std::vector<std::vector<std::string>> cells{header};
  for (const auto& r : report.rows) {
    std::vector<std::string> line{r.model, fmt(r.category_accuracy)};
    for (const double x : r.recall) line.push_back(fmt(x));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::string out;
  for (const auto& [k, v] : report.config) out += k + " = " + v + "\n";
  if (!report.config.empty()) out += '\n';
  for (std::size_t l = 0; l < cells.size(); ++l) {
    for (std::size_t c = 0; c < cells[l].size(); ++c) {
      const auto& s = cells[l][c];
      const std::string pad(width[c] - s.size(), ' ');
      out += c == 0 ? s + pad : "  " + pad + s;
    }
    out += '\n';
    if (l == 0) {
      std::size_t total = 0;
      for (const auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + '\n';
    }
  }
  return out;
}

}  // namespace mmr::evalkit
