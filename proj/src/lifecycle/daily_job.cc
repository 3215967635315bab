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

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <json.hpp>

#include "mmr/common/errors.h"
#include "mmr/lifecycle/pipeline.h"

namespace mmr::lifecycle {
namespace {

class StoreLock {
 public:
  explicit StoreLock(const std::string& root) {
    const auto path = (std::filesystem::path(root) / ".lock").string();
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) throw StateError("cannot open lock file " + path);
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
      ::close(fd_);
      throw StateError("another daily job holds " + path);
    }
  }
  ~StoreLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace

DailyResult daily_job(const std::string& day, const CatalogSnapshot& catalog,
                      PartitionStore& store, const Embedder& embed, const std::string& model_hash,
                      ann::ConcurrentIndex& index, const DailyJobConfig& cfg) {
  StoreLock lock(store.root());
  const auto start = std::chrono::steady_clock::now();
  DailyResult result;
  auto& report = result.report;
  report.day = day;
  const auto ts = day_timestamp(day);
  if (catalog.day != day) throw DomainError("catalog snapshot is for " + catalog.day + ", not " + day);

  const auto prev_day = store.previous(day);
  if (!prev_day && !cfg.bootstrap) {
    throw StateError("no partition before " + day + "; run with bootstrap for the first day");
  }
  auto stage = [&](const char* name, auto&& body) {
    report.stage = name;
    try {
      body();
    } catch (const std::exception& e) {
      report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      throw DailyJobError(std::string("daily job failed at ") + name + ": " + e.what(), report);
    }
  };

  FeaturePartition prev;
  stage("load", [&] {
    if (prev_day) {
      prev = store.load(*prev_day);
      report.previous_day = *prev_day;
    }
  });
  FeaturePartition partial;
  stage("copy", [&] {
    partial = copy_forward(prev, catalog, cfg.kind, model_hash);
    report.copied = partial.entries.size();
  });
  stage("embed", [&] {
    auto embedded = embed_new_items(catalog, std::move(partial), cfg.kind, embed, ts);
    result.partition = std::move(embedded.partition);
    report.embedded = embedded.embedded;
    report.skipped = embedded.failures.size();
    report.failures = std::move(embedded.failures);
  });
  stage("diff", [&] { result.commands = diff_partitions(prev, result.partition); });
  stage("persist", [&] {
    store.save(result.partition);
    store.save_commands(day, result.commands);
  });
  stage("apply", [&] {
    const auto applied = apply_commands(index, result.commands);
    report.warnings = applied.warnings;
  });
  for (const auto& c : result.commands) {
    if (c.kind == CommandKind::kDelete) ++report.deleted;
    else ++report.updated;
  }
  stage("retention", [&] { report.removed_days = store.apply_retention(cfg.retention); });
  report.stage = "done";
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string daily_report_json(const DailyReport& r) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : r.failures) failures.push_back({{"key", f.key}, {"reason", f.reason}});
  return nlohmann::json{{"day", r.day},
                        {"previous_day", r.previous_day},
                        {"copied", r.copied},
                        {"embedded", r.embedded},
                        {"skipped", r.skipped},
                        {"deleted", r.deleted},
                        {"updated", r.updated},
                        {"seconds", r.seconds},
                        {"failures", failures},
                        {"warnings", r.warnings},
                        {"removed_days", r.removed_days},
                        {"stage", r.stage}}
      .dump(2);
}

}  // namespace mmr::lifecycle
