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

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

namespace mmr::engine {

enum class EventKind { kRequest, kImpression, kClick, kAddToCart, kOrder };

const char* event_kind_name(EventKind kind);
// Throws RequestError for an unknown name.
EventKind parse_event_kind(const std::string& name);

struct ActivityEvent {
  std::int64_t timestamp_us = 0;
  std::string request_id;
  EventKind kind = EventKind::kRequest;
  nlohmann::json payload = nlohmann::json::object();
};

nlohmann::json event_to_json(const ActivityEvent& event);
ActivityEvent event_from_json(const nlohmann::json& j);

// Append-only newline-delimited JSON log fed through a single-consumer
// queue. Timestamps are assigned on append and strictly increase.
class ActivityLog {
 public:
  explicit ActivityLog(const std::string& path);
  ~ActivityLog();
  ActivityLog(const ActivityLog&) = delete;
  ActivityLog& operator=(const ActivityLog&) = delete;

  void append(ActivityEvent event);
  // Blocks until every appended event is on disk.
  void flush();
  std::size_t appended() const;
  const std::string& path() const { return path_; }

 private:
  void run();

  std::string path_;
  std::ofstream out_;
  mutable std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable drained_;
  std::deque<ActivityEvent> queue_;
  std::int64_t last_ts_ = 0;
  std::size_t appended_ = 0;
  std::size_t written_ = 0;
  bool stop_ = false;
  std::thread worker_;
};

std::vector<ActivityEvent> read_activity_log(const std::string& path);

}  // namespace mmr::engine
