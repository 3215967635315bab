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

#include "mmr/cli/cli.h"

#include <CLI11.hpp>
#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "mmr/cli/config.h"
#include "mmr/common/binary_io.h"
#include "mmr/common/errors.h"
#include "mmr/engine/server.h"
#include "mmr/evalkit/evalkit.h"
#include "mmr/lifecycle/pipeline.h"
#include "mmr/lifecycle/simulate.h"
#include "mmr/trainer/grad_suite.h"

namespace mmr::cli {
namespace {

namespace fs = std::filesystem;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct Workspace {
  fs::path root;

  fs::path data() const { return root / "data"; }
  fs::path model_dir() const { return root / "model"; }
  fs::path model() const { return model_dir() / "model.ckpt"; }
  fs::path index_dir() const { return root / "index"; }
  fs::path i2i_index() const { return index_dir() / "i2i.snap"; }
  fs::path miem_index() const { return index_dir() / "miem.snap"; }
  fs::path store() const { return root / "store"; }
  fs::path catalogs() const { return store() / "catalogs"; }
  fs::path reports() const { return root / "reports"; }
  fs::path activity() const { return root / "activity.jsonl"; }
};

void require(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw StateError("missing " + path.string() + "; " + hint);
}

trainer::SyntheticCorpus load_data(const Workspace& ws) {
  require(ws.data() / "catalog.jsonl", "run gen-data first");
  return trainer::load_corpus(ws.data().string());
}

towers::TowerModel load_model(const Workspace& ws) {
  require(ws.model(), "run train first");
  return towers::load_checkpoint(ws.model().string());
}

engine::IndexPair load_indexes(const Workspace& ws) {
  require(ws.i2i_index(), "run build-index first");
  require(ws.miem_index(), "run build-index first");
  return {ann::HnswIndex::deserialize(read_file(ws.i2i_index().string())),
          ann::HnswIndex::deserialize(read_file(ws.miem_index().string()))};
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  write_file(path.string(), text);
}

std::string next_day(const std::string& day) {
  const std::time_t t = static_cast<std::time_t>(lifecycle::day_timestamp(day) + 86400);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[16];
  std::strftime(buf, sizeof buf, "%Y-%m-%d", &tm);
  return buf;
}

// Live catalog: the newest simulated snapshot, else the generated one.
Catalog live_catalog(const Workspace& ws) {
  if (fs::exists(ws.store() / "miem")) {
    const auto days = lifecycle::PartitionStore((ws.store() / "miem").string()).days();
    if (!days.empty() && fs::exists(ws.catalogs() / (days.back() + ".jsonl"))) {
      return load_catalog((ws.catalogs() / (days.back() + ".jsonl")).string());
    }
  }
  require(ws.data() / "catalog.jsonl", "run gen-data first");
  return load_catalog((ws.data() / "catalog.jsonl").string());
}

Catalog churn_pool(const Config& cfg) {
  auto spec = cfg.data_spec();
  spec.seed = spec.seed * 31 + 7;
  spec.duplicate_fraction = 0.0;
  spec.eval_queries = 1;
  auto pool = trainer::generate_synthetic_logs(spec).catalog;
  for (auto& p : pool) p.product_id = "n" + p.product_id;
  return pool;
}

void print_rows(std::ostream& out, const std::vector<trainer::GradSuiteRow>& rows, std::uint64_t seed) {
  for (const auto& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "seed %llu  %-22s max_rel_err %.3e  coords %zu\n",
                  static_cast<unsigned long long>(seed), r.loss.c_str(), r.max_relative_error,
                  r.checked);
    out << buf;
  }
}

int cmd_gen_data(const Workspace& ws, const Config& cfg, std::ostream& out) {
  const auto corpus = trainer::generate_synthetic_logs(cfg.data_spec());
  trainer::save_corpus(corpus, ws.data().string());
  std::size_t images = 0;
  for (const auto& p : corpus.catalog) images += p.images.size();
  out << "wrote " << corpus.catalog.size() << " products (" << images << " images), "
      << corpus.logs.size() << " click logs, " << corpus.eval_queries.size() << " eval queries to "
      << ws.data().string() << "\n";
  return kExitOk;
}

int cmd_train(const Workspace& ws, const Config& cfg, const std::string& which, std::ostream& out) {
  std::vector<int> stages;
  if (which == "all") {
    stages = {1, 2, 3};
  } else if (which == "1" || which == "2" || which == "3") {
    stages = {which[0] - '0'};
  } else {
    throw UsageError("--stage must be 1, 2, 3 or all");
  }
  const auto corpus = load_data(ws);
  const auto cc = cfg.curriculum();
  std::optional<towers::TowerModel> model;
  if (stages.front() == 1) {
    model.emplace(cfg.model_config(), cfg.u64("seed"));
  } else {
    model.emplace(load_model(ws));
  }
  fs::create_directories(ws.model_dir());
  for (const int stage : stages) {
    auto tc = cc.base;
    tc.stage = stage;
    tc.epochs = stage == 1 ? cc.stage1_epochs : stage == 2 ? cc.stage2_epochs : cc.stage3_epochs;
    const auto r = trainer::train_stage(stage, *model, corpus.logs, tc);
    const auto name = "stage" + std::to_string(stage);
    write_text(ws.model_dir() / ("loss_" + name + ".csv"), trainer::loss_curve_csv(r.curve));
    towers::save_checkpoint(*model, (ws.model_dir() / (name + ".ckpt")).string());
    towers::save_checkpoint(*model, ws.model().string());
    char buf[160];
    std::snprintf(buf, sizeof buf, "stage %d: %zu epochs, %zu steps, loss %.4f -> %.4f, %.1fs\n", stage,
                  tc.epochs, r.curve.size(), r.curve.empty() ? 0.0 : r.curve.front().loss,
                  r.curve.empty() ? 0.0 : r.curve.back().loss, r.seconds);
    out << buf;
  }
  out << "checkpoint " << ws.model().string() << "\n";
  return kExitOk;
}

int cmd_build_index(const Workspace& ws, const Config& cfg, std::ostream& out) {
  const auto model = load_model(ws);
  const auto catalog = live_catalog(ws);
  const auto pair = engine::build_indexes(model, catalog, cfg.index_config());
  fs::create_directories(ws.index_dir());
  const auto i2i = pair.i2i.serialize();
  const auto miem = pair.miem.serialize();
  write_file(ws.i2i_index().string(), i2i);
  write_file(ws.miem_index().string(), miem);
  std::size_t products = 0;
  for (const auto& p : catalog) products += p.available;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "products %zu\ni2i entries %zu (%zu bytes)\nmiem entries %zu (%zu bytes)\n"
                "miem/i2i entry ratio %.4f\n",
                products, pair.i2i.live_count(), i2i.size(), pair.miem.live_count(), miem.size(),
                pair.i2i.live_count() ? static_cast<double>(pair.miem.live_count()) / pair.i2i.live_count() : 0.0);
  out << buf;
  return kExitOk;
}

int cmd_daily_job(const Workspace& ws, const Config& cfg, std::size_t days, const std::string& day_opt,
                  const std::string& catalog_opt, bool bootstrap_opt, std::ostream& out) {
  const auto model = load_model(ws);
  const auto hash = lifecycle::model_hash(model);
  auto hc = cfg.index_config();
  hc.dim = model.config().output_dim;
  ann::ConcurrentIndex i2i{fs::exists(ws.i2i_index())
                               ? ann::HnswIndex::deserialize(read_file(ws.i2i_index().string()))
                               : ann::HnswIndex(hc)};
  ann::ConcurrentIndex miem{fs::exists(ws.miem_index())
                                ? ann::HnswIndex::deserialize(read_file(ws.miem_index().string()))
                                : ann::HnswIndex(hc)};
  lifecycle::PartitionStore miem_store((ws.store() / "miem").string());
  lifecycle::PartitionStore i2i_store((ws.store() / "i2i").string());
  fs::create_directories(ws.catalogs());

  auto run_day = [&](const lifecycle::CatalogSnapshot& snap, bool bootstrap) {
    write_text(ws.catalogs() / (snap.day + ".jsonl"), catalog_to_jsonl(snap.products));
    lifecycle::DailyJobConfig jc;
    jc.bootstrap = bootstrap;
    jc.retention = cfg.size("lifecycle.retention");
    for (const auto kind : {lifecycle::JobKind::kMiem, lifecycle::JobKind::kI2I}) {
      jc.kind = kind;
      auto& store = kind == lifecycle::JobKind::kMiem ? miem_store : i2i_store;
      auto& index = kind == lifecycle::JobKind::kMiem ? miem : i2i;
      const auto r = lifecycle::daily_job(snap.day, snap, store, lifecycle::model_embedder(model, kind),
                                          hash, index, jc);
      const auto json = lifecycle::daily_report_json(r.report);
      write_text(ws.reports() / ("daily_" + snap.day + "_" + lifecycle::job_kind_name(kind) + ".json"), json);
      out << lifecycle::job_kind_name(kind) << " " << json << "\n";
    }
    for (const auto& e : fs::directory_iterator(ws.catalogs())) {
      const auto d = e.path().stem().string();
      if (!miem_store.has(d)) fs::remove(e.path());
    }
  };

  if (!catalog_opt.empty()) {
    if (day_opt.empty()) throw UsageError("--catalog needs --day");
    lifecycle::CatalogSnapshot snap{day_opt, load_catalog(catalog_opt)};
    run_day(snap, bootstrap_opt);
  } else {
    if (!day_opt.empty()) throw UsageError("--day needs --catalog");
    const auto pool = churn_pool(cfg);
    const auto state_path = ws.store() / "sim_state.json";
    std::size_t cursor = 0;
    if (fs::exists(state_path)) cursor = nlohmann::json::parse(read_file(state_path.string())).at("cursor");
    for (std::size_t i = 0; i < days; ++i) {
      const auto stored = miem_store.days();
      lifecycle::CatalogSnapshot snap;
      bool bootstrap = false;
      if (stored.empty()) {
        snap.day = cfg.str("lifecycle.start_day");
        lifecycle::day_timestamp(snap.day);
        snap.products = load_data(ws).catalog;
        bootstrap = true;
      } else {
        const auto& last = stored.back();
        require(ws.catalogs() / (last + ".jsonl"), "catalog snapshot of " + last + " is gone");
        const lifecycle::CatalogSnapshot prev{last, load_catalog((ws.catalogs() / (last + ".jsonl")).string())};
        const auto seed = cfg.u64("seed") * 1000003 + static_cast<std::uint64_t>(lifecycle::day_timestamp(last));
        lifecycle::ChurnStats stats;
        snap = lifecycle::churn_catalog(prev, pool, cursor, cfg.number("lifecycle.churn"), next_day(last),
                                        seed, &stats);
        out << "day " << snap.day << ": churn deleted " << stats.deleted << ", edited " << stats.edited
            << ", added " << stats.added << "\n";
      }
      run_day(snap, bootstrap);
      write_text(state_path, nlohmann::json{{"cursor", cursor}}.dump() + "\n");
    }
  }
  fs::create_directories(ws.index_dir());
  write_file(ws.i2i_index().string(), i2i.snapshot().serialize());
  write_file(ws.miem_index().string(), miem.snapshot().serialize());
  out << "indexes: i2i " << i2i.live_count() << ", miem " << miem.live_count() << "\n";
  return kExitOk;
}

int cmd_serve(const Workspace& ws, const Config& cfg, std::ostream& out) {
  auto model = std::make_shared<const towers::TowerModel>(load_model(ws));
  auto pair = load_indexes(ws);
  auto indexes = std::make_shared<engine::DualIndexSet>();
  indexes->i2i.replace(std::move(pair.i2i));
  indexes->miem.replace(std::move(pair.miem));
  auto catalog = std::make_shared<const engine::CatalogView>(live_catalog(ws));
  engine::ActivityLog log(ws.activity().string());
  engine::SearchEngine engine(model, indexes, catalog, cfg.engine_config(), &log);
  engine::HttpServer server(engine);
  g_stop = false;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto host = cfg.str("serve.host");
  const int port = server.start(host, static_cast<int>(cfg.size("serve.port")));
  out << "listening on " << host << ":" << port << "\n" << std::flush;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  log.flush();
  out << "stopped\n";
  return kExitOk;
}

int cmd_eval(const Workspace& ws, const Config& cfg, std::ostream& out) {
  auto pair = load_indexes(ws);
  const auto model = load_model(ws);
  const auto corpus = load_data(ws);
  const auto ec = cfg.eval_config();
  std::set<std::string> expected, indexed;
  for (const auto& p : corpus.catalog) {
    if (p.available) expected.insert(p.product_id);
  }
  for (const auto& e : pair.miem.live_entries()) indexed.insert(e.key);
  if (expected != indexed) {
    out << "index snapshot differs from the generated catalog; evaluating on a fresh in-memory build\n";
    pair = engine::build_indexes(model, corpus.catalog, cfg.index_config());
  }
  std::optional<evalkit::SameItemGroups> groups;
  if (cfg.flag("eval.merge")) {
    const auto pairs = evalkit::same_item_pairs(model, corpus.catalog, corpus.latent_item, 3, cfg.u64("seed"));
    evalkit::SameItemClassifier clf(model.config().output_dim, 32, cfg.u64("seed"));
    evalkit::SameItemClassifier::TrainConfig tc;
    tc.seed = cfg.u64("seed");
    clf.train(pairs, tc);
    std::vector<ann::KeyedVector> images;
    for (const auto& e : pair.i2i.live_entries()) images.push_back(e);
    groups = evalkit::merge_same_items(corpus.catalog, images, clf, cfg.size("eval.k_probe"),
                                       cfg.number("eval.threshold"));
    std::size_t pure = 0;
    for (const auto& g : groups->groups) {
      bool same = true;
      for (const auto& id : g) same &= corpus.latent_item.at(id) == corpus.latent_item.at(g.front());
      pure += same;
    }
    out << "same-item merge: " << groups->merges << " merges, " << groups->groups.size() << " groups, "
        << pure << " pure\n";
  }
  const auto report = evalkit::run_offline_eval(model, pair, corpus.catalog, corpus.eval_queries, ec,
                                                groups ? &*groups : nullptr);
  const auto text = evalkit::report_text(report);
  write_text(ws.reports() / "eval.csv", evalkit::report_csv(report));
  write_text(ws.reports() / "eval.txt", text);
  out << text;

  std::vector<std::set<std::string>> truths;
  for (const auto& q : corpus.eval_queries) {
    truths.push_back(groups && ec.merge_truth ? groups->expand(q.truth)
                                              : std::set<std::string>(q.truth.begin(), q.truth.end()));
  }
  const auto candidates = evalkit::collect_candidates(model, pair, corpus.eval_queries, ec);
  const auto grid = cfg.numbers("eval.weights");
  const auto sweep = evalkit::sweep_fusion_weight(candidates, truths, grid, ec.depth);
  std::string csv = "weight,recall_at_5\n";
  out << "\nfusion weight sweep (Recall@5)\n";
  for (const auto& [w, r] : sweep.curve) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g,%.4f\n", w, r);
    csv += buf;
    std::snprintf(buf, sizeof buf, "  w=%-6g %.4f\n", w, r);
    out << buf;
  }
  out << "best weight " << sweep.best_weight << "\n";
  write_text(ws.reports() / "sweep.csv", csv);
  return kExitOk;
}

int cmd_gradcheck(const Config& cfg, std::size_t seeds, std::ostream& out) {
  const std::uint64_t first = cfg.u64("seed");
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (std::uint64_t s = first; s < first + seeds; ++s) {
    const auto rows = trainer::run_grad_suite(s);
    print_rows(out, rows, s);
    for (const auto& r : rows) {
      if (!worst.contains(r.loss)) order.push_back(r.loss);
      worst[r.loss] = std::max(worst[r.loss], r.max_relative_error);
    }
  }
  bool ok = true;
  for (const auto& name : order) {
    char buf[128];
    const bool pass = worst[name] < 1e-4;
    ok &= pass;
    std::snprintf(buf, sizeof buf, "%-22s worst %.3e  %s\n", name.c_str(), worst[name], pass ? "ok" : "FAIL");
    out << buf;
  }
  return ok ? kExitOk : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal image search: data, training, indexing, daily jobs, serving, evaluation",
               "mmr"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string workspace = "workspace";
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  app.add_option("-w,--workspace", workspace, "Directory holding all artifacts")->capture_default_str();
  app.add_option("-c,--config", config_file, "Flat key=value config file");
  app.add_option("-s,--set", sets, "Override one config key (key=value), repeatable");
  app.add_option("--seed", seed, "Random seed");

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic catalog, click logs and eval queries");
  std::optional<std::size_t> classes, items, eval_queries;
  gen->add_option("--classes", classes, "Number of classes");
  gen->add_option("--items", items, "Items per class");
  gen->add_option("--eval-queries", eval_queries, "Held-out eval queries");

  auto* train = app.add_subcommand("train", "Train one curriculum stage or all three");
  std::string stage = "all";
  train->add_option("--stage", stage, "1, 2, 3 or all")->capture_default_str();

  app.add_subcommand("build-index", "Embed the catalog into the I2I and MIEM index snapshots");

  auto* daily = app.add_subcommand("daily-job", "Run daily feature refresh jobs");
  std::size_t days = 1;
  std::string day, catalog;
  bool bootstrap = false;
  std::optional<double> churn;
  daily->add_option("--days", days, "Simulated days to run after the last stored one")->capture_default_str();
  daily->add_option("--churn", churn, "Fraction of products changed per simulated day");
  daily->add_option("--day", day, "Day key YYYY-MM-DD for an explicit catalog snapshot");
  daily->add_option("--catalog", catalog, "Catalog snapshot (JSON lines) for --day");
  daily->add_flag("--bootstrap", bootstrap, "Allow a first day without a previous partition");

  auto* serve = app.add_subcommand("serve", "Serve /search, /event and /healthz over HTTP");
  std::optional<std::string> host;
  std::optional<std::size_t> port;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");

  app.add_subcommand("eval", "Offline evaluation report and fusion weight sweep");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every loss gradient");
  std::size_t seeds = 1;
  grad->add_option("--seeds", seeds, "Number of consecutive seeds")->capture_default_str();

  std::vector<std::string> argv;
  for (auto it = args.rbegin(); it != args.rend(); ++it) argv.push_back(*it);
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    const auto extra = app.remaining();
    if (app.get_subcommands().empty() && !extra.empty() && extra.front().rfind("-", 0) != 0) {
      err << "error: unknown subcommand '" << extra.front() << "'\n\n" << app.help();
      return kExitUsage;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  try {
    Config cfg;
    if (!config_file.empty()) cfg.load_file(config_file);
    for (const auto& s : sets) cfg.set_assignment(s);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (classes) cfg.set("data.classes", std::to_string(*classes));
    if (items) cfg.set("data.items_per_class", std::to_string(*items));
    if (eval_queries) cfg.set("data.eval_queries", std::to_string(*eval_queries));
    if (churn) cfg.set("lifecycle.churn", std::to_string(*churn));
    if (host) cfg.set("serve.host", *host);
    if (port) cfg.set("serve.port", std::to_string(*port));
    cfg.data_spec();
    cfg.model_config();
    cfg.curriculum();
    cfg.index_config();
    cfg.engine_config();
    cfg.eval_config();
    cfg.numbers("eval.weights");

    const Workspace ws{workspace};
    out << "# " << sub->get_name() << " (workspace " << ws.root.string() << ")\n";
    std::istringstream echo(cfg.echo());
    for (std::string line; std::getline(echo, line);) out << "# " << line << "\n";

    const auto& name = sub->get_name();
    if (name == "gen-data") return cmd_gen_data(ws, cfg, out);
    if (name == "train") return cmd_train(ws, cfg, stage, out);
    if (name == "build-index") return cmd_build_index(ws, cfg, out);
    if (name == "daily-job") return cmd_daily_job(ws, cfg, days, day, catalog, bootstrap, out);
    if (name == "serve") return cmd_serve(ws, cfg, out);
    if (name == "eval") return cmd_eval(ws, cfg, out);
    if (name == "gradcheck") return cmd_gradcheck(cfg, seeds, out);
    err << "error: unknown subcommand\n" << app.help();
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mmr::cli
