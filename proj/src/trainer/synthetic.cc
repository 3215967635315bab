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

#include "mmr/trainer/synthetic.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <numbers>
#include <set>
#include <sstream>

#include "mmr/common/binary_io.h"
#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"
#include "mmr/common/rng.h"

namespace mmr::trainer {
namespace {

using nlohmann::json;

struct Grating {
  double fx = 0, fy = 0, phase = 0, amp = 0;
  double at(double x, double y) const {
    return amp * std::cos(2.0 * std::numbers::pi * (fx * x + fy * y) + phase);
  }
};

Grating random_grating(Rng& rng, double min_freq, double max_freq, double amp) {
  const double f = rng.uniform(min_freq, max_freq);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  return Grating{f * std::cos(angle), f * std::sin(angle), rng.uniform(0.0, 2 * std::numbers::pi),
                 amp};
}

struct Motif {
  std::vector<Grating> gratings;
};

struct ClassCue {
  std::size_t row = 0, col = 0;  // top-left of a 4x4 block
  double delta = 0;
  Grating grating;
};

struct Item {
  std::size_t cls = 0;
  Grating texture;
  double brightness = 0;
};

struct World {
  std::size_t size = 16;
  std::vector<Motif> motifs;  // per motif group
  std::vector<std::size_t> motif_of_class;
  std::vector<ClassCue> cues;
};

GrayImage render(const World& w, const Item& item, Rng& view);

// Catalog shot: with probability `share`, the product is blended with a
// distractor rendered from another class.
GrayImage render_listing(const World& w, const Item& item, const std::vector<Item>& pool,
                         double share, double strength, Rng& view) {
  GrayImage img = render(w, item, view);
  if (pool.empty() || !(view.uniform() < share)) return img;
  const Item* other = &pool[view.below(pool.size())];
  while (other->cls == item.cls && pool.size() > 1) other = &pool[view.below(pool.size())];
  const GrayImage distractor = render(w, *other, view);
  const double mix = strength * view.uniform(0.5, 1.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = (1.0 - mix) * img.pixels[i] + mix * distractor.pixels[i];
  }
  return img;
}

GrayImage render(const World& w, const Item& item, Rng& view) {
  const Motif& motif = w.motifs[w.motif_of_class[item.cls]];
  const ClassCue& cue = w.cues[item.cls];
  const int dx = 0, dy = 0;
  const double gain = 1.0 + 0.05 * view.normal();
  const double offset = item.brightness + 0.03 * view.normal();
  double norm = 0;
  for (const auto& g : motif.gratings) norm += g.amp;

  GrayImage img = GrayImage::blank(w.size, w.size);
  const int n = static_cast<int>(w.size);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int sr = (r + dy + n) % n, sc = (c + dx + n) % n;
      const double x = static_cast<double>(sc) / n, y = static_cast<double>(sr) / n;
      double m = 0;
      for (const auto& g : motif.gratings) m += g.at(x, y);
      double v = 0.5 + 0.3 * m / norm + cue.grating.at(x, y) + item.texture.at(x, y);
      if (static_cast<std::size_t>(sr) >= cue.row && static_cast<std::size_t>(sr) < cue.row + 4 &&
          static_cast<std::size_t>(sc) >= cue.col && static_cast<std::size_t>(sc) < cue.col + 4) {
        v += cue.delta;
      }
      v = 0.5 + gain * (v - 0.5) + offset + 0.03 * view.normal();
      img.at(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return img;
}

std::vector<std::string> make_words(Rng& rng, std::size_t count) {
  static constexpr const char* kConsonants = "bdfgklmnprstvz";
  static constexpr const char* kVowels = "aeiou";
  std::set<std::string> seen;
  std::vector<std::string> out;
  while (out.size() < count) {
    std::string w;
    const std::size_t syllables = 2 + rng.below(2);
    for (std::size_t s = 0; s < syllables; ++s) {
      w.push_back(kConsonants[rng.below(14)]);
      w.push_back(kVowels[rng.below(5)]);
    }
    if (seen.insert(w).second) out.push_back(w);
  }
  return out;
}

std::string product_id(std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "p%06zu", n);
  return buf;
}

std::string join_words(std::vector<std::string> words, Rng& rng) {
  rng.shuffle(words);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

const char* relation_name(Relation r) {
  switch (r) {
    case Relation::kIdentical: return "identical";
    case Relation::kSimilar: return "similar";
    case Relation::kNoise: return "noise";
  }
  return "?";
}

Relation parse_relation(const std::string& name) {
  if (name == "identical") return Relation::kIdentical;
  if (name == "similar") return Relation::kSimilar;
  if (name == "noise") return Relation::kNoise;
  throw FormatError("unknown relation '" + name + "'");
}

void SyntheticCatalogSpec::validate() const {
  if (classes == 0 || items_per_class == 0 || logs_per_item == 0) {
    throw DomainError("SyntheticCatalogSpec: counts must be >= 1");
  }
  if (min_images == 0 || max_images < min_images) {
    throw DomainError("SyntheticCatalogSpec: need 1 <= min_images <= max_images");
  }
  if (identical_share < 0 || similar_share < 0 || noise_share < 0 ||
      std::abs(identical_share + similar_share + noise_share - 1.0) > 1e-9) {
    throw DomainError("SyntheticCatalogSpec: relation mix must be non-negative and sum to 1");
  }
  if (duplicate_fraction < 0 || duplicate_fraction > 1) {
    throw DomainError("SyntheticCatalogSpec: duplicate_fraction must lie in [0, 1]");
  }
  if (image_size < 8 || image_size % 4 != 0) {
    throw DomainError("SyntheticCatalogSpec: image_size must be a multiple of 4, >= 8");
  }
  if (vocab_size < 40) throw DomainError("SyntheticCatalogSpec: vocab_size must be >= 40");
}

SyntheticCorpus generate_synthetic_logs(const SyntheticCatalogSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Rng words_rng(rng.fork());
  Rng world_rng(rng.fork());
  Rng view_rng(rng.fork());
  Rng log_rng(rng.fork());
  Rng eval_rng(rng.fork());

  const auto words = make_words(words_rng, spec.vocab_size);
  const std::size_t filler_count = 30;
  auto content_word = [&](Rng& r) { return words[filler_count + r.below(words.size() - filler_count)]; };

  World world;
  world.size = spec.image_size;
  const std::size_t groups = spec.confusable_pairs ? (spec.classes + 1) / 2 : spec.classes;
  for (std::size_t g = 0; g < groups; ++g) {
    Motif m;
    for (int k = 0; k < 3; ++k) m.gratings.push_back(random_grating(world_rng, 0.5, 3.0, world_rng.uniform(0.6, 1.0)));
    world.motifs.push_back(std::move(m));
  }
  const std::size_t blocks = spec.image_size / 4;
  std::vector<std::vector<std::string>> class_words(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    world.motif_of_class.push_back(spec.confusable_pairs ? c / 2 : c);
    ClassCue cue;
    cue.row = 4 * world_rng.below(blocks);
    cue.col = 4 * world_rng.below(blocks);
    cue.delta = world_rng.below(2) ? 0.25 : -0.25;
    cue.grating = random_grating(world_rng, 1.0, 4.0, 0.08);
    world.cues.push_back(cue);
    for (int k = 0; k < 3; ++k) class_words[c].push_back(content_word(world_rng));
  }

  SyntheticCorpus corpus;
  struct Listing {
    Item item;
    std::vector<std::string> words;
    std::int64_t latent = 0;
  };
  std::vector<Listing> listings;
  std::vector<std::vector<std::size_t>> items_of_class(spec.classes);

  std::vector<Item> pool;
  auto add_product = [&](const Listing& l) {
    ProductRecord p;
    p.product_id = product_id(corpus.catalog.size() + 1);
    p.title = join_words(l.words, world_rng);
    const std::size_t n_images = spec.min_images + world_rng.below(spec.max_images - spec.min_images + 1);
    for (std::size_t i = 0; i < n_images; ++i) {
      p.images.push_back(encode_pgm(
          render_listing(world, l.item, pool, spec.clutter_share, spec.clutter_strength, view_rng)));
    }
    p.category = static_cast<std::int64_t>(l.item.cls);
    p.popularity = world_rng.uniform();
    corpus.latent_item[p.product_id] = l.latent;
    corpus.catalog.push_back(std::move(p));
  };

  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t j = 0; j < spec.items_per_class; ++j) {
      Listing l;
      l.item.cls = c;
      l.item.texture = random_grating(world_rng, 2.0, 6.0, 0.12);
      l.item.brightness = 0.05 * world_rng.normal();
      l.words = class_words[c];
      l.words.push_back(content_word(world_rng));
      l.words.push_back(content_word(world_rng));
      const std::size_t fillers = 1 + world_rng.below(2);
      for (std::size_t f = 0; f < fillers; ++f) l.words.push_back(words[world_rng.below(filler_count)]);
      l.latent = static_cast<std::int64_t>(listings.size());
      items_of_class[c].push_back(listings.size());
      listings.push_back(l);
    }
  }
  for (const auto& l : listings) pool.push_back(l.item);
  for (const auto& l : listings) add_product(l);
  const std::size_t originals = listings.size();

  const auto dup_count = static_cast<std::size_t>(std::llround(spec.duplicate_fraction * originals));
  std::vector<std::size_t> order(originals);
  for (std::size_t i = 0; i < originals; ++i) order[i] = i;
  world_rng.shuffle(order);
  std::map<std::int64_t, std::vector<std::string>> ids_of_latent;
  for (std::size_t i = 0; i < originals; ++i) {
    ids_of_latent[static_cast<std::int64_t>(i)].push_back(corpus.catalog[i].product_id);
  }
  for (std::size_t d = 0; d < dup_count; ++d) {
    add_product(listings[order[d]]);
    ids_of_latent[listings[order[d]].latent].push_back(corpus.catalog.back().product_id);
  }

  std::vector<std::vector<GrayImage>> decoded(corpus.catalog.size());
  for (std::size_t i = 0; i < corpus.catalog.size(); ++i) decoded[i] = decode_images(corpus.catalog[i]);

  const std::size_t n_logs = originals * spec.logs_per_item;
  const auto n_identical = static_cast<std::size_t>(std::llround(spec.identical_share * n_logs));
  const auto n_similar = std::min(n_logs - n_identical,
                                  static_cast<std::size_t>(std::llround(spec.similar_share * n_logs)));
  std::vector<Relation> relations(n_logs, Relation::kNoise);
  std::fill(relations.begin(), relations.begin() + n_identical, Relation::kIdentical);
  std::fill(relations.begin() + n_identical, relations.begin() + n_identical + n_similar,
            Relation::kSimilar);
  log_rng.shuffle(relations);

  auto random_image_of = [&](std::size_t item) -> const GrayImage& {
    const auto& imgs = decoded[item];
    return imgs[log_rng.below(imgs.size())];
  };
  for (std::size_t i = 0; i < n_logs; ++i) {
    ClickLogTriplet t;
    t.relation = relations[i];
    std::size_t clicked = i % originals;
    if (t.relation == Relation::kIdentical) {
      t.query_image = random_image_of(clicked);
    } else if (t.relation == Relation::kSimilar) {
      const auto& same = items_of_class[listings[clicked].item.cls];
      if (same.size() < 2) {
        t.query_image = random_image_of(clicked);
      } else {
        std::size_t other = clicked;
        while (other == clicked) other = same[log_rng.below(same.size())];
        t.query_image = random_image_of(other);
      }
    } else {
      const auto& qcls = items_of_class[log_rng.below(spec.classes)];
      t.query_image = random_image_of(qcls[log_rng.below(qcls.size())]);
      const auto& ccls = items_of_class[log_rng.below(spec.classes)];
      clicked = ccls[log_rng.below(ccls.size())];
    }
    const auto& product = corpus.catalog[clicked];
    t.product_id = product.product_id;
    t.clicked_title = product.title;
    t.clicked_images = decoded[clicked];
    t.class_id = product.category;
    corpus.logs.push_back(std::move(t));
  }

  for (std::size_t q = 0; q < spec.eval_queries; ++q) {
    const std::size_t item = eval_rng.below(originals);
    EvalQuery e;
    e.image = quantize8(render(world, listings[item].item, eval_rng));
    e.truth = ids_of_latent[listings[item].latent];
    e.category = static_cast<std::int64_t>(listings[item].item.cls);
    corpus.eval_queries.push_back(std::move(e));
  }
  return corpus;
}

void save_corpus(const SyntheticCorpus& corpus, const std::string& dir) {
  std::filesystem::create_directories(dir);
  save_catalog(corpus.catalog, dir + "/catalog.jsonl");

  std::string logs;
  for (const auto& t : corpus.logs) {
    json j = {{"query", base64_encode(encode_pgm(t.query_image))},
              {"product_id", t.product_id},
              {"class_id", t.class_id},
              {"relation", relation_name(t.relation)}};
    logs += j.dump() + "\n";
  }
  write_file(dir + "/logs.jsonl", logs);

  std::string queries;
  for (const auto& q : corpus.eval_queries) {
    json j = {{"query", base64_encode(encode_pgm(q.image))}, {"truth", q.truth}, {"category", q.category}};
    queries += j.dump() + "\n";
  }
  write_file(dir + "/eval_queries.jsonl", queries);

  json latent = json::object();
  for (const auto& [pid, item] : corpus.latent_item) latent[pid] = item;
  write_file(dir + "/latent_items.json", latent.dump() + "\n");
}

namespace {

GrayImage image_field(const json& j, const char* key) {
  auto bytes = base64_decode(j.at(key).get<std::string>());
  if (!bytes) throw FormatError(std::string("bad base64 in field ") + key);
  auto img = decode_pgm(*bytes);
  if (!img) throw FormatError(std::string("bad PGM in field ") + key);
  return *img;
}

template <typename F>
void for_each_json_line(const std::string& path, F&& f) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

}  // namespace

std::vector<ClickLogTriplet> load_logs(const std::string& path, const Catalog& catalog) {
  const auto by_id = index_by_id(catalog);
  std::vector<ClickLogTriplet> out;
  for_each_json_line(path, [&](const json& j) {
    ClickLogTriplet t;
    t.query_image = image_field(j, "query");
    t.product_id = j.at("product_id").get<std::string>();
    auto it = by_id.find(t.product_id);
    if (it == by_id.end()) throw ConsistencyError("log references unknown product " + t.product_id);
    const auto& p = catalog[it->second];
    t.clicked_title = p.title;
    t.clicked_images = decode_images(p);
    if (t.clicked_images.empty()) throw FormatError("clicked product " + t.product_id + " has no readable image");
    t.class_id = j.at("class_id").get<std::int64_t>();
    t.relation = parse_relation(j.at("relation").get<std::string>());
    out.push_back(std::move(t));
  });
  return out;
}

SyntheticCorpus load_corpus(const std::string& dir) {
  SyntheticCorpus c;
  c.catalog = load_catalog(dir + "/catalog.jsonl");
  c.logs = load_logs(dir + "/logs.jsonl", c.catalog);
  for_each_json_line(dir + "/eval_queries.jsonl", [&](const json& j) {
    EvalQuery q;
    q.image = image_field(j, "query");
    q.truth = j.at("truth").get<std::vector<std::string>>();
    q.category = j.at("category").get<std::int64_t>();
    c.eval_queries.push_back(std::move(q));
  });
  try {
    const json latent = json::parse(read_file(dir + "/latent_items.json"));
    for (const auto& [pid, item] : latent.items()) c.latent_item[pid] = item.get<std::int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("latent_items.json: ") + e.what());
  }
  return c;
}

}  // namespace mmr::trainer
