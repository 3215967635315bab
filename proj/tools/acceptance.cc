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

#include <CLI11.hpp>
#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <set>

#include "mmr/annindex/concurrent.h"
#include "mmr/annindex/hnsw.h"
#include "mmr/cli/config.h"
#include "mmr/common/binary_io.h"
#include "mmr/common/encoding.h"
#include "mmr/common/rng.h"
#include "mmr/engine/engine.h"
#include "mmr/engine/server.h"
#include "mmr/evalkit/evalkit.h"
#include "mmr/lifecycle/pipeline.h"
#include "mmr/lifecycle/simulate.h"
#include "mmr/losses/losses.h"
#include "mmr/trainer/grad_suite.h"
#include "mmr/trainer/synthetic.h"
#include "mmr/trainer/trainer.h"

namespace {

using namespace mmr;
using nlohmann::json;
using nc::Tensor;
namespace fs = std::filesystem;

// log(1 + e^-1) and log(1 + e^-1.8), evaluated independently with python3 math.
constexpr double kOrthonormalInfoNce = 0.31326168751822286;
constexpr double kOrthonormalAmInfoNce = 0.15297761052607406;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  std::function<Outcome()> run;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({r, c}, std::move(v));
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mmr_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

towers::TowerConfig small_model() {
  towers::TowerConfig c;
  c.token_dim = 16;
  c.heads = 2;
  c.ffn_dim = 32;
  c.fusion_layers = 1;
  c.output_dim = 16;
  c.vocab_size = 128;
  c.max_title_len = 8;
  return c;
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& row : trainer::run_grad_suite(seed)) {
      worst[row.loss] = std::max(worst[row.loss], row.max_relative_error);
    }
  }
  const double secs = seconds_since(t0);
  bool ok = worst.size() == 4 && secs < 60.0;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok &= err < 1e-4;
    detail += fmt("%s %.1e, ", name.c_str(), err);
  }
  return {ok, detail + fmt("20 seeds in %.1fs", secs)};
}

Outcome loss_reduction_identity() {
  Rng rng(2024);
  losses::LossConfig cfg;
  cfg.gamma = 1.0;
  cfg.margin = 0.0;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(8), d = 2 + rng.below(15);
    const auto q = random_tensor(rng, n, d), t = random_tensor(rng, n, d);
    const double a = losses::am_info_nce(q, t, cfg).item();
    const double b = losses::info_nce({q, t, std::vector<std::int64_t>(n, 0)}).item();
    worst = std::max(worst, std::abs(a - b));
  }
  return {worst <= 1e-9, fmt("max |diff| %.2e over 100 batches", worst)};
}

Outcome hand_derived_values() {
  const auto e = Tensor::from({2, 2}, {1, 0, 0, 1});
  const double a = losses::info_nce({e, e, {0, 1}}).item();
  losses::LossConfig cfg;
  cfg.gamma = 2.0;
  cfg.margin = 0.1;
  const double b = losses::am_info_nce(e, e, cfg).item();
  const double ea = std::abs(a - kOrthonormalInfoNce), eb = std::abs(b - kOrthonormalAmInfoNce);
  return {ea <= 1e-9 && eb <= 1e-9, fmt("info_nce %.15f (err %.1e), am_info_nce %.15f (err %.1e)", a, ea, b, eb)};
}

Outcome ann_quality() {
  const auto t0 = std::chrono::steady_clock::now();
  ann::HnswConfig cfg;
  cfg.dim = 32;
  ann::HnswIndex index(cfg);
  Rng rng(77);
  auto unit = [&] {
    std::vector<float> v(32);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return ann::normalize(v);
  };
  for (std::size_t i = 0; i < 10000; ++i) index.insert("v" + std::to_string(i), unit());
  const auto store = index.live_entries();
  std::size_t hits = 0, total = 0, exact = 0;
  for (int q = 0; q < 100; ++q) {
    const auto query = unit();
    const auto truth = ann::brute_force_knn(store, query, 10);
    std::set<std::string> want;
    for (const auto& h : truth) want.insert(h.key);
    for (const auto& h : index.search(query, 10)) hits += want.contains(h.key);
    total += want.size();
    exact += index.search(query, 10, index.live_count()) == truth;
  }
  const double recall = static_cast<double>(hits) / static_cast<double>(total);
  const double secs = seconds_since(t0);
  return {recall >= 0.95 && exact == 100 && secs < 60.0,
          fmt("recall@10 %.4f, exact at full ef %zu/100, %.1fs", recall, exact, secs)};
}

Outcome masking_invariance() {
  towers::TowerModel model(towers::TowerConfig{}, 11);
  const auto& mc = model.config();
  Rng rng(5);
  auto noise_image = [&] {
    GrayImage img = GrayImage::blank(mc.image_size, mc.image_size);
    for (auto& p : img.pixels) p = rng.uniform();
    return img;
  };
  double worst = 0;
  std::size_t padded = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<GrayImage> imgs;
    const std::size_t n = 1 + rng.below(mc.k_images - 1);
    for (std::size_t i = 0; i < n; ++i) imgs.push_back(noise_image());
    towers::TitleTokens title;
    const std::size_t len = 1 + rng.below(mc.max_title_len);
    for (std::size_t i = 0; i < len; ++i) {
      title.ids.push_back(towers::kFirstWordId +
                          static_cast<std::uint32_t>(rng.below(mc.vocab_size - towers::kFirstWordId)));
    }
    const auto item = towers::make_item_input(title, imgs, 0, mc);
    auto perturbed = item;
    for (std::size_t s = 0; s < perturbed.images.images.size(); ++s) {
      if (!perturbed.images.mask.valid[s]) {
        perturbed.images.images[s] = noise_image();
        ++padded;
      }
    }
    for (auto path : {towers::FusionPath::kCompact, towers::FusionPath::kMasked}) {
      std::vector<towers::ItemInput> a{item}, b{perturbed};
      const auto ea = model.item_embeddings(a, losses::FusionVariant::kFull, path);
      const auto eb = model.item_embeddings(b, losses::FusionVariant::kFull, path);
      for (std::size_t i = 0; i < ea.size(); ++i) worst = std::max(worst, std::abs(ea.data()[i] - eb.data()[i]));
    }
  }

  trainer::SyntheticCatalogSpec spec;
  spec.classes = 6;
  spec.items_per_class = 4;
  spec.min_images = 1;
  spec.max_images = 1;
  spec.vocab_size = 120;
  spec.eval_queries = 1;
  const auto corpus = trainer::generate_synthetic_logs(spec);
  towers::TowerModel base(small_model(), 4);
  base.set_trained_stage(2);
  auto m2 = base.clone();
  auto m3 = base.clone();
  trainer::TrainConfig tc;
  tc.epochs = 2;
  const auto r2 = trainer::train_stage(2, m2, corpus.logs, tc);
  const auto r3 = trainer::train_stage(3, m3, corpus.logs, tc);
  double step_gap = r2.curve.size() == r3.curve.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(r2.curve.size(), r3.curve.size()); ++i) {
    step_gap = std::max(step_gap, std::abs(r2.curve[i].loss - r3.curve[i].loss) /
                                      std::max(1.0, std::abs(r2.curve[i].loss)));
  }
  return {worst < 1e-6 && padded > 0 && step_gap <= 1e-9,
          fmt("padded-slot drift %.2e over 100 items (%zu slots), stage3 vs stage2 max step gap %.2e over %zu steps",
              worst, padded, step_gap, r2.curve.size())};
}

Outcome end_to_end(const cli::Config& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = trainer::generate_synthetic_logs(cfg.data_spec());
  towers::TowerModel model(cfg.model_config(), cfg.u64("seed"));
  trainer::train_curriculum(model, corpus.logs, cfg.curriculum());
  const double train_secs = seconds_since(t0);
  const auto indexes = engine::build_indexes(model, corpus.catalog, cfg.index_config());
  auto ec = cfg.eval_config();
  ec.one_emb_per_image = false;
  const auto report = evalkit::run_offline_eval(model, indexes, corpus.catalog, corpus.eval_queries, ec);
  std::map<std::string, evalkit::MetricRow> rows;
  for (const auto& r : report.rows) rows[r.model] = r;
  const auto& i2i = rows.at("I2I");
  const auto& miem = rows.at("MIEM");
  const auto& fused = rows.at("MIEM+I2I");
  const std::size_t at5 = 2;
  const bool a = miem.category_accuracy >= i2i.category_accuracy;
  const bool b = fused.recall[at5] >= std::max(i2i.recall[at5], miem.recall[at5]) - 0.01;
  const double secs = seconds_since(t0);
  return {a && b,
          fmt("(a) %s cat MIEM %.4f vs I2I %.4f; (b) %s R@5 fused %.4f vs I2I %.4f, MIEM %.4f; "
              "train %.0fs, total %.0fs (target < 900s)",
              a ? "ok" : "FAIL", miem.category_accuracy, i2i.category_accuracy, b ? "ok" : "FAIL",
              fused.recall[at5], i2i.recall[at5], miem.recall[at5], train_secs, secs)};
}

Outcome storage_counting() {
  const auto corpus = trainer::generate_synthetic_logs(trainer::SyntheticCatalogSpec{});
  towers::TowerModel model(towers::TowerConfig{}, 1);
  const auto pair = engine::build_indexes(model, corpus.catalog, ann::HnswConfig{});
  std::size_t products = 0, images = 0;
  for (const auto& p : corpus.catalog) {
    products += p.available;
    if (p.available) images += p.images.size();
  }
  const double avg = static_cast<double>(images) / static_cast<double>(products);
  const double ratio = static_cast<double>(pair.miem.live_count()) / static_cast<double>(pair.i2i.live_count());
  const bool ok = pair.miem.live_count() == products && pair.i2i.live_count() == images &&
                  std::abs(avg - 4.0) <= 0.2 && std::abs(ratio - 1.0 / avg) <= 1e-12;
  return {ok, fmt("products %zu, images %zu (avg %.2f/product), MIEM entries %zu, I2I entries %zu, ratio %.4f",
                  products, images, avg, pair.miem.live_count(), pair.i2i.live_count(), ratio)};
}

Outcome lifecycle_soundness() {
  trainer::SyntheticCatalogSpec s;
  s.classes = 200;
  s.max_images = 3;
  s.eval_queries = 100;
  s.duplicate_fraction = 0.0;
  const auto corpus = trainer::generate_synthetic_logs(s);
  lifecycle::CatalogSnapshot snap;
  snap.day = "2024-01-01";
  snap.products.assign(corpus.catalog.begin(), corpus.catalog.begin() + 1000);
  const Catalog pool(corpus.catalog.begin() + 1000, corpus.catalog.end());

  const towers::TowerModel model(small_model(), 3);
  const auto embed = lifecycle::model_embedder(model, lifecycle::JobKind::kMiem);
  const auto hash = lifecycle::model_hash(model);
  ann::HnswConfig hc;
  hc.dim = model.config().output_dim;
  const auto root = scratch("lifecycle");
  lifecycle::PartitionStore store((root / "miem").string());
  ann::ConcurrentIndex index{ann::HnswIndex(hc)};
  lifecycle::DailyJobConfig jc;
  jc.bootstrap = true;
  lifecycle::daily_job(snap.day, snap, store, embed, hash, index, jc);
  jc.bootstrap = false;

  std::size_t cursor = 0, commands = 0;
  lifecycle::DailyResult last;
  const char* days[] = {"2024-01-02", "2024-01-03", "2024-01-04"};
  for (int d = 0; d < 3; ++d) {
    snap = lifecycle::churn_catalog(snap, pool, cursor, 0.1, days[d], 100 + d);
    last = lifecycle::daily_job(days[d], snap, store, embed, hash, index, jc);
    commands += last.commands.size();
  }
  ann::ConcurrentIndex fresh(lifecycle::build_index_from_partition(store.load(days[2]), hc));

  std::size_t same = 0;
  for (const auto& q : corpus.eval_queries) {
    const auto v = model.query_embedding(q.image);
    same += index.search(v, 10, index.live_count()) == fresh.search(v, 10, fresh.live_count());
  }

  const auto state = index.snapshot().serialize();
  const auto records = read_file((root / "miem" / days[2] / "records.bin").string());
  const auto replay = lifecycle::daily_job(days[2], snap, store, embed, hash, index, jc);
  const bool idempotent = replay.commands == last.commands && replay.partition == last.partition &&
                          read_file((root / "miem" / days[2] / "records.bin").string()) == records &&
                          index.snapshot().serialize() == state;
  std::size_t available = 0;
  for (const auto& p : snap.products) available += p.available;
  fs::remove_all(root);
  const bool ok = same == 100 && idempotent && index.live_count() == available && commands > 0;
  return {ok, fmt("incremental vs fresh top-10 identical %zu/100 probes, %zu commands over 3 days, live %zu of %zu, replay %s",
                  same, commands, index.live_count(), available, idempotent ? "idempotent" : "NOT idempotent")};
}

Outcome serving_contracts() {
  trainer::SyntheticCatalogSpec s;
  s.classes = 20;
  s.max_images = 4;
  s.eval_queries = 50;
  const auto corpus = trainer::generate_synthetic_logs(s);
  auto model = std::make_shared<const towers::TowerModel>(small_model(), 9);
  auto pair = engine::build_indexes(*model, corpus.catalog, ann::HnswConfig{});
  auto indexes = std::make_shared<engine::DualIndexSet>();
  indexes->i2i.replace(std::move(pair.i2i));
  indexes->miem.replace(std::move(pair.miem));
  const auto root = scratch("serving");
  const auto log_path = (root / "activity.jsonl").string();

  std::map<std::string, std::size_t> served;
  std::size_t duplicates = 0, order_violations = 0, failures = 0;
  {
    engine::ActivityLog log(log_path);
    engine::SearchEngine engine(model, indexes, std::make_shared<const engine::CatalogView>(corpus.catalog), {},
                                &log);
    engine::HttpServer server(engine);
    const int port = server.start("127.0.0.1", 0);
    httplib::Client client("127.0.0.1", port);
    Rng rng(31);
    for (int i = 0; i < 1000; ++i) {
      json body{{"page_size", 1 + rng.below(100)}};
      if (rng.below(2)) {
        body["image_b64"] = base64_encode(encode_pgm(corpus.eval_queries[rng.below(corpus.eval_queries.size())].image));
      } else {
        std::vector<float> v(model->config().output_dim);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        body["vector"] = v;
      }
      const auto res = client.Post("/search", body.dump(), "application/json");
      if (!res || res->status != 200) {
        ++failures;
        continue;
      }
      const auto j = json::parse(res->body);
      std::set<std::string> ids;
      double prev = INFINITY;
      for (const auto& item : j["items"]) {
        duplicates += !ids.insert(item["product_id"].get<std::string>()).second;
        const double score = item["score"].get<double>();
        order_violations += score > prev;
        prev = score;
      }
      served[j["request_id"].get<std::string>()] = j["items"].size();
    }
    server.stop();
    log.flush();
  }
  std::map<std::string, std::size_t> requests, impressions;
  for (const auto& e : engine::read_activity_log(log_path)) {
    if (e.kind == engine::EventKind::kRequest) ++requests[e.request_id];
    if (e.kind == engine::EventKind::kImpression) ++impressions[e.request_id];
  }
  std::size_t log_mismatch = requests.size() != served.size();
  for (const auto& [id, n] : served) log_mismatch += requests[id] != 1 || impressions[id] != n;
  fs::remove_all(root);
  const bool ok = failures == 0 && served.size() == 1000 && duplicates == 0 && order_violations == 0 &&
                  log_mismatch == 0;
  return {ok, fmt("%zu/1000 served, %zu duplicate ids, %zu score inversions, %zu activity-log mismatches",
                  served.size(), duplicates, order_violations, log_mismatch)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria: one pass/fail line per criterion", "mmr_acceptance"};
  std::vector<std::string> only, skip, sets;
  std::string config_file;
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--skip", skip, "Skip these criteria");
  app.add_option("-c,--config", config_file, "Config file for the end-to-end criterion");
  app.add_option("-s,--set", sets, "Config override (key=value) for the end-to-end criterion");
  CLI11_PARSE(app, argc, argv);

  cli::Config cfg;
  try {
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& s : sets) cfg.set_assignment(s);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  const std::vector<Criterion> criteria = {
      {"gradient-correctness", gradient_correctness},
      {"loss-reduction-identity", loss_reduction_identity},
      {"hand-derived-values", hand_derived_values},
      {"ann-quality", ann_quality},
      {"masking-invariance", masking_invariance},
      {"end-to-end-ordering", [&] { return end_to_end(cfg); }},
      {"storage-counting", storage_counting},
      {"lifecycle-soundness", lifecycle_soundness},
      {"serving-contracts", serving_contracts},
  };
  auto listed = [](const std::vector<std::string>& v, const std::string& n) {
    return std::find(v.begin(), v.end(), n) != v.end();
  };
  for (const auto& n : only) {
    bool known = false;
    for (const auto& c : criteria) known |= c.name == n;
    if (!known) {
      std::fprintf(stderr, "error: unknown criterion '%s'\n", n.c_str());
      return 2;
    }
  }

  std::size_t failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if ((!only.empty() && !listed(only, c.name)) || listed(skip, c.name)) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %-24s %s  [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
