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

#include <gtest/gtest.h>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <filesystem>
#include <json.hpp>
#include <set>

#include "mmr/common/binary_io.h"
#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/engine/engine.h"
#include "mmr/lifecycle/pipeline.h"
#include "mmr/lifecycle/simulate.h"
#include "mmr/trainer/synthetic.h"

namespace mmr::lifecycle {
namespace {

namespace fs = std::filesystem;

constexpr std::size_t kDim = 8;

Embedder fake_embedder(std::size_t* calls = nullptr) {
  return [calls](const ProductRecord& p, const FeatureUnit& u) {
    if (calls) ++*calls;
    Rng rng(content_hash(p) ^ Fnv1a64().update(u.key).digest());
    std::vector<float> v(kDim);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
  };
}

ann::HnswConfig index_cfg() {
  ann::HnswConfig c;
  c.dim = kDim;
  c.m = 8;
  c.ef_construction = 64;
  return c;
}

std::string temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("mmr_lifecycle_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

struct World {
  CatalogSnapshot base;
  Catalog pool;
};

World make_world(std::size_t items, std::uint64_t seed = 1) {
  trainer::SyntheticCatalogSpec s;
  s.classes = (items * 2 + 9) / 10;
  s.items_per_class = 10;
  s.max_images = 3;
  s.eval_queries = 1;
  s.duplicate_fraction = 0.0;
  s.seed = seed;
  auto corpus = trainer::generate_synthetic_logs(s);
  World w;
  w.base.day = "2024-01-01";
  w.base.products.assign(corpus.catalog.begin(), corpus.catalog.begin() + static_cast<std::ptrdiff_t>(items));
  w.pool.assign(corpus.catalog.begin() + static_cast<std::ptrdiff_t>(items), corpus.catalog.end());
  return w;
}

FeaturePartition full_partition(const CatalogSnapshot& cat, JobKind kind = JobKind::kMiem) {
  FeaturePartition empty;
  empty.day = cat.day;
  return embed_new_items(cat, empty, kind, fake_embedder(), day_timestamp(cat.day)).partition;
}

std::vector<std::set<std::string>> probe(const ann::ConcurrentIndex& index, std::size_t probes,
                                         std::size_t live) {
  Rng rng(99);
  std::vector<std::set<std::string>> out;
  for (std::size_t i = 0; i < probes; ++i) {
    std::vector<float> q(kDim);
    for (auto& x : q) x = static_cast<float>(rng.normal());
    std::set<std::string> keys;
    for (const auto& h : index.search(q, 10, live)) keys.insert(h.key);
    out.push_back(std::move(keys));
  }
  return out;
}

TEST(Validate, Examples) {
  ProductRecord p{"p1", "Sepatu Pria Casual", {encode_pgm(GrayImage::blank(4, 4))}, 0, 0, true};
  EXPECT_TRUE(validate_item(p).accepted);
  auto bad_title = p;
  bad_title.title = "?! .";
  EXPECT_EQ(validate_item(bad_title).reason, "title");
  bad_title.title = "";
  EXPECT_FALSE(validate_item(bad_title).accepted);
  auto bad_images = p;
  bad_images.images = {"not an image", ""};
  EXPECT_EQ(validate_item(bad_images).reason, "images");
  auto one_good = p;
  one_good.images.push_back("junk");
  EXPECT_TRUE(validate_item(one_good).accepted);
}

TEST(Hash, DeterministicAndSensitive) {
  ProductRecord p{"p1", "title", {"ab", "c"}, 0, 0, true};
  EXPECT_EQ(content_hash(p), content_hash(p));
  auto q = p;
  q.title = "title2";
  EXPECT_NE(content_hash(p), content_hash(q));
  q = p;
  q.images = {"a", "bc"};
  EXPECT_NE(content_hash(p), content_hash(q));
  q = p;
  q.popularity = 5;
  EXPECT_EQ(content_hash(p), content_hash(q));
}

TEST(Records, RoundTripAndRejects) {
  FeaturePartition p;
  p.day = "2024-01-01";
  p.entries["b"] = {7, {1.0f, 2.0f}, 100};
  p.entries["a"] = {9, {3.0f}, 200};
  const auto bytes = serialize_records(p);
  EXPECT_EQ(deserialize_records(bytes), p.entries);
  EXPECT_THROW(deserialize_records(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(deserialize_records(bytes + "z"), FormatError);
  BinaryWriter w;
  w.put_raw("MMRP");
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(2);
  for (const char* k : {"b", "a"}) {
    w.put_string(k);
    w.put<std::uint64_t>(0);
    w.put<std::uint32_t>(0);
    w.put<std::int64_t>(0);
  }
  EXPECT_THROW(deserialize_records(w.bytes()), FormatError);
}

TEST(Commands, JsonlRoundTrip) {
  const std::vector<IndexCommand> cmds{{CommandKind::kDelete, "a", {}},
                                       {CommandKind::kUpdate, "c", {0.5f, -1.0f}}};
  const auto text = commands_to_jsonl(cmds);
  EXPECT_EQ(text, "{\"kind\":\"delete\",\"product_id\":\"a\"}\n"
                  "{\"embedding\":[0.5,-1.0],\"kind\":\"update\",\"product_id\":\"c\"}\n");
  EXPECT_EQ(commands_from_jsonl(text), cmds);
  EXPECT_THROW(commands_from_jsonl("{\"kind\":\"move\",\"product_id\":\"a\"}\n"), FormatError);
  EXPECT_THROW(commands_from_jsonl("nope\n"), FormatError);
}

TEST(CopyForward, Examples) {
  auto w = make_world(60);
  const auto prev = full_partition(w.base);
  CatalogSnapshot same = w.base;
  same.day = "2024-01-02";
  const auto copied = copy_forward(prev, same, JobKind::kMiem, "");
  EXPECT_EQ(copied.entries, prev.entries);
  EXPECT_EQ(copied.day, "2024-01-02");

  auto edited = same;
  edited.products[3].title += " new";
  const auto after_edit = copy_forward(prev, edited, JobKind::kMiem, "");
  EXPECT_EQ(after_edit.entries.size(), prev.entries.size() - 1);
  EXPECT_FALSE(after_edit.entries.contains(edited.products[3].product_id));

  EXPECT_TRUE(copy_forward(prev, same, JobKind::kMiem, "other-model").entries.empty());
}

TEST(CopyForward, MatchesIntersectionOracle) {
  auto w = make_world(1000);
  const auto prev = full_partition(w.base);
  std::size_t cursor = 0;
  ChurnStats stats;
  const auto next = churn_catalog(w.base, w.pool, cursor, 0.1, "2024-01-02", 5, &stats);
  EXPECT_EQ(stats.deleted + stats.edited + stats.added, 100u);
  std::set<std::pair<std::string, std::uint64_t>> a, b;
  for (const auto& p : w.base.products) a.insert({p.product_id, content_hash(p)});
  for (const auto& p : next.products) b.insert({p.product_id, content_hash(p)});
  std::set<std::string> oracle;
  for (const auto& x : a) {
    if (b.contains(x)) oracle.insert(x.first);
  }
  std::set<std::string> got;
  for (const auto& [k, e] : copy_forward(prev, next, JobKind::kMiem, "").entries) got.insert(k);
  EXPECT_EQ(got, oracle);
  EXPECT_EQ(got.size(), 1000u - stats.deleted - stats.edited);
}

TEST(EmbedNewItems, Examples) {
  auto w = make_world(20);
  auto snap = w.base;
  snap.products.push_back({"bad-title", "!!!", snap.products[0].images, 0, 0, true});
  snap.products.push_back({"bad-images", "ok title", {"garbage"}, 0, 0, true});
  FeaturePartition empty;
  empty.day = snap.day;
  std::size_t calls = 0;
  const auto r = embed_new_items(snap, empty, JobKind::kMiem, fake_embedder(&calls), 1234);
  EXPECT_EQ(r.embedded, 20u);
  EXPECT_EQ(calls, 20u);
  EXPECT_EQ(r.partition.entries.size(), 20u);
  EXPECT_EQ(r.partition.entries.begin()->second.embed_ts, 1234);
  ASSERT_EQ(r.failures.size(), 2u);
  EXPECT_EQ(r.failures[0], (EmbedFailure{"bad-title", "invalid title"}));
  EXPECT_EQ(r.failures[1], (EmbedFailure{"bad-images", "invalid images"}));

  calls = 0;
  const auto again = embed_new_items(snap, r.partition, JobKind::kMiem, fake_embedder(&calls), 999);
  EXPECT_EQ(again.embedded, 0u);
  EXPECT_EQ(calls, 0u);
  EXPECT_EQ(again.partition, r.partition);

  Embedder flaky = [&](const ProductRecord& p, const FeatureUnit& u) {
    if (p.product_id == snap.products[2].product_id) throw std::runtime_error("service down");
    return fake_embedder()(p, u);
  };
  const auto partial = embed_new_items(snap, empty, JobKind::kMiem, flaky, 1);
  EXPECT_EQ(partial.embedded, 19u);
  EXPECT_EQ(partial.failures.size(), 3u);
}

TEST(Diff, Examples) {
  FeaturePartition prev, curr;
  prev.entries["a"] = {1, {1, 0}, 0};
  prev.entries["b"] = {2, {0, 1}, 0};
  EXPECT_TRUE(diff_partitions(prev, prev).empty());
  curr.entries["b"] = prev.entries["b"];
  curr.entries["c"] = {3, {1, 1}, 0};
  const std::vector<IndexCommand> expected{{CommandKind::kDelete, "a", {}},
                                           {CommandKind::kUpdate, "c", {1, 1}}};
  EXPECT_EQ(diff_partitions(prev, curr), expected);
  curr.entries["b"].embedding = {0, 2};
  EXPECT_EQ(diff_partitions(prev, curr).size(), 3u);
}

TEST(Diff, MatchesSymmetricDifferenceOracle) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    FeaturePartition prev, curr;
    for (int i = 0; i < 200; ++i) {
      const auto key = "k" + std::to_string(i);
      const float v = static_cast<float>(rng.below(3));
      if (rng.uniform() < 0.8) prev.entries[key] = {0, {v}, 0};
      if (rng.uniform() < 0.8) curr.entries[key] = {0, {rng.uniform() < 0.9 ? v : v + 1}, 0};
    }
    std::set<std::string> deletes, updates;
    for (const auto& [k, e] : prev.entries) {
      if (!curr.entries.contains(k)) deletes.insert(k);
    }
    for (const auto& [k, e] : curr.entries) {
      if (!prev.entries.contains(k) || prev.entries.at(k).embedding != e.embedding) updates.insert(k);
    }
    std::set<std::string> got_d, got_u;
    for (const auto& c : diff_partitions(prev, curr)) {
      (c.kind == CommandKind::kDelete ? got_d : got_u).insert(c.key);
    }
    EXPECT_EQ(got_d, deletes);
    EXPECT_EQ(got_u, updates);
  }
}

TEST(ApplyCommands, EmptyAndReplay) {
  auto w = make_world(100);
  const auto part = full_partition(w.base);
  ann::ConcurrentIndex index(build_index_from_partition(part, index_cfg()));
  const auto before = index.snapshot().serialize();
  apply_commands(index, {});
  EXPECT_EQ(index.snapshot().serialize(), before);

  std::size_t cursor = 0;
  const auto next = full_partition(churn_catalog(w.base, w.pool, cursor, 0.1, "2024-01-02", 1));
  const auto cmds = diff_partitions(part, next);
  const auto first = apply_commands(index, cmds);
  EXPECT_TRUE(first.warnings.empty());
  const auto state = index.snapshot().serialize();
  const auto second = apply_commands(index, cmds);
  EXPECT_EQ(index.snapshot().serialize(), state);
  EXPECT_EQ(second.deleted, 0u);
  EXPECT_EQ(second.updated, 0u);
  EXPECT_EQ(second.warnings.size(), first.deleted);
}

TEST(ApplyCommands, ChurnMatchesFreshBuild) {
  auto w = make_world(1000);
  const auto part = full_partition(w.base);
  ann::ConcurrentIndex index(build_index_from_partition(part, index_cfg()));
  std::size_t cursor = 0;
  const auto next = full_partition(churn_catalog(w.base, w.pool, cursor, 0.1, "2024-01-02", 2));
  apply_commands(index, diff_partitions(part, next));
  ann::ConcurrentIndex fresh(build_index_from_partition(next, index_cfg()));
  ASSERT_EQ(index.live_count(), fresh.live_count());
  EXPECT_EQ(probe(index, 100, index.live_count()), probe(fresh, 100, fresh.live_count()));
}

class DailyJobTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root = temp_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    store = std::make_unique<PartitionStore>(root + "/miem");
  }
  std::string root;
  std::unique_ptr<PartitionStore> store;
  ann::ConcurrentIndex index{ann::HnswIndex(index_cfg())};
  DailyJobConfig cfg;
};

TEST_F(DailyJobTest, BootstrapAndZeroChurn) {
  auto w = make_world(100);
  EXPECT_THROW(daily_job("2024-01-01", w.base, *store, fake_embedder(), "m", index, cfg), StateError);
  cfg.bootstrap = true;
  const auto day1 = daily_job("2024-01-01", w.base, *store, fake_embedder(), "m", index, cfg);
  EXPECT_EQ(day1.commands.size(), 100u);
  for (const auto& c : day1.commands) EXPECT_EQ(c.kind, CommandKind::kUpdate);
  EXPECT_EQ(day1.report.embedded, 100u);
  EXPECT_EQ(index.live_count(), 100u);

  const auto manifest = nlohmann::json::parse(read_file(root + "/miem/2024-01-01/manifest.json"));
  EXPECT_EQ(manifest["day"], "2024-01-01");
  EXPECT_EQ(manifest["count"], 100);
  EXPECT_EQ(manifest["record_file"], "records.bin");
  EXPECT_EQ(manifest["model_checkpoint_hash"], "m");
  EXPECT_EQ(store->load_commands("2024-01-01"), day1.commands);

  auto same = w.base;
  same.day = "2024-01-02";
  cfg.bootstrap = false;
  std::size_t calls = 0;
  const auto day2 = daily_job("2024-01-02", same, *store, fake_embedder(&calls), "m", index, cfg);
  EXPECT_TRUE(day2.commands.empty());
  EXPECT_EQ(day2.report.copied, 100u);
  EXPECT_EQ(calls, 0u);
  EXPECT_EQ(day2.report.previous_day, "2024-01-01");
  EXPECT_EQ(day2.partition.entries, day1.partition.entries);
}

TEST_F(DailyJobTest, ThreeDaysMatchFreshBuildAndReplayIsIdempotent) {
  auto w = make_world(1000);
  cfg.bootstrap = true;
  daily_job("2024-01-01", w.base, *store, fake_embedder(), "m", index, cfg);
  cfg.bootstrap = false;
  CatalogSnapshot snap = w.base;
  std::size_t cursor = 0;
  const char* days[] = {"2024-01-02", "2024-01-03", "2024-01-04"};
  DailyResult last;
  for (int d = 0; d < 3; ++d) {
    snap = churn_catalog(snap, w.pool, cursor, 0.1, days[d], 10 + d);
    last = daily_job(days[d], snap, *store, fake_embedder(), "m", index, cfg);
    EXPECT_GT(last.commands.size(), 0u);
  }
  const auto final_part = store->load("2024-01-04");
  EXPECT_EQ(final_part, last.partition);
  std::set<std::string> live;
  for (const auto& p : snap.products) live.insert(p.product_id);
  std::set<std::string> keys;
  for (const auto& [k, e] : final_part.entries) keys.insert(k);
  EXPECT_EQ(keys, live);

  ann::ConcurrentIndex fresh(build_index_from_partition(final_part, index_cfg()));
  ASSERT_EQ(index.live_count(), fresh.live_count());
  EXPECT_EQ(probe(index, 100, index.live_count()), probe(fresh, 100, fresh.live_count()));

  const auto state = index.snapshot().serialize();
  const auto records = read_file(root + "/miem/2024-01-04/records.bin");
  const auto replay = daily_job("2024-01-04", snap, *store, fake_embedder(), "m", index, cfg);
  EXPECT_EQ(replay.commands, last.commands);
  EXPECT_EQ(replay.partition, last.partition);
  EXPECT_EQ(read_file(root + "/miem/2024-01-04/records.bin"), records);
  EXPECT_EQ(index.snapshot().serialize(), state);
}

TEST_F(DailyJobTest, RetentionKeepsNewestPartitions) {
  auto w = make_world(30);
  cfg.bootstrap = true;
  cfg.retention = 7;
  CatalogSnapshot snap = w.base;
  std::size_t cursor = 0;
  for (int d = 1; d <= 9; ++d) {
    char day[16];
    std::snprintf(day, sizeof day, "2024-02-%02d", d);
    snap = churn_catalog(snap, w.pool, cursor, 0.1, day, d);
    daily_job(day, snap, *store, fake_embedder(), "m", index, cfg);
  }
  const auto days = store->days();
  ASSERT_EQ(days.size(), 7u);
  EXPECT_EQ(days.front(), "2024-02-03");
  EXPECT_EQ(days.back(), "2024-02-09");
}

TEST_F(DailyJobTest, LockIsExclusive) {
  auto w = make_world(10);
  cfg.bootstrap = true;
  const int fd = ::open((root + "/miem/.lock").c_str(), O_RDWR | O_CREAT, 0644);
  ASSERT_GE(fd, 0);
  ASSERT_EQ(::flock(fd, LOCK_EX | LOCK_NB), 0);
  EXPECT_THROW(daily_job("2024-01-01", w.base, *store, fake_embedder(), "m", index, cfg), StateError);
  ::flock(fd, LOCK_UN);
  ::close(fd);
  EXPECT_NO_THROW(daily_job("2024-01-01", w.base, *store, fake_embedder(), "m", index, cfg));
}

TEST_F(DailyJobTest, FailureCarriesPartialReport) {
  auto w = make_world(10);
  cfg.bootstrap = true;
  ann::HnswConfig wrong = index_cfg();
  wrong.dim = kDim + 1;
  ann::ConcurrentIndex bad{ann::HnswIndex(wrong)};
  try {
    daily_job("2024-01-01", w.base, *store, fake_embedder(), "m", bad, cfg);
    FAIL() << "expected DailyJobError";
  } catch (const DailyJobError& e) {
    EXPECT_EQ(e.report().stage, "apply");
    EXPECT_EQ(e.report().embedded, 10u);
  }
}

TEST_F(DailyJobTest, I2iSiblingJobKeysEveryImage) {
  auto w = make_world(40);
  cfg.bootstrap = true;
  cfg.kind = JobKind::kI2I;
  PartitionStore i2i_store(root + "/i2i");
  const auto r = daily_job("2024-01-01", w.base, i2i_store, fake_embedder(), "m", index, cfg);
  std::size_t images = 0;
  for (const auto& p : w.base.products) images += decode_images(p).size();
  EXPECT_EQ(r.partition.entries.size(), images);
  EXPECT_EQ(index.live_count(), images);
  for (const auto& [k, e] : r.partition.entries) EXPECT_NO_THROW(engine::parse_i2i_key(k));

  auto next = w.base;
  next.day = "2024-01-02";
  next.products[0].images.pop_back();
  next.products[0].images.push_back(encode_pgm(GrayImage::blank(16, 16)));
  cfg.bootstrap = false;
  const auto r2 = daily_job("2024-01-02", next, i2i_store, fake_embedder(), "m", index, cfg);
  ASSERT_EQ(r2.commands.size(), 1u);
  EXPECT_EQ(r2.commands[0].kind, CommandKind::kUpdate);
}

TEST(DayTimestamp, Parses) {
  EXPECT_EQ(day_timestamp("1970-01-02"), 86400);
  EXPECT_EQ(day_timestamp("2024-03-01") - day_timestamp("2024-02-28"), 2 * 86400);
  EXPECT_THROW(day_timestamp("2024-02-30"), DomainError);
  EXPECT_THROW(day_timestamp("day-one"), DomainError);
}

TEST(ModelEmbedder, RealModelPartition) {
  auto w = make_world(20);
  towers::TowerConfig tc;
  tc.token_dim = 16;
  tc.heads = 2;
  tc.ffn_dim = 32;
  tc.fusion_layers = 1;
  tc.output_dim = 16;
  tc.vocab_size = 128;
  const towers::TowerModel model(tc, 1);
  FeaturePartition empty;
  const auto r = embed_new_items(w.base, empty, JobKind::kMiem, model_embedder(model, JobKind::kMiem), 0);
  ASSERT_EQ(r.partition.entries.size(), 20u);
  const auto& first = w.base.products[0];
  EXPECT_EQ(r.partition.entries.at(first.product_id).embedding,
            model.item_embedding(engine::item_input_for(first, tc)));
  EXPECT_EQ(model_hash(model), model_hash(model.clone()));
  EXPECT_NE(model_hash(model), model_hash(towers::TowerModel(tc, 2)));
}

}  // namespace
}  // namespace mmr::lifecycle
