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

#include "mmr/engine/activity_log.h"

#include <chrono>

#include "mmr/common/errors.h"

namespace mmr::engine {

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kRequest: return "request";
    case EventKind::kImpression: return "impression";
    case EventKind::kClick: return "click";
    case EventKind::kAddToCart: return "add_to_cart";
    case EventKind::kOrder: return "order";
  }
  return "unknown";
}

EventKind parse_event_kind(const std::string& name) {
  for (auto k : {EventKind::kRequest, EventKind::kImpression, EventKind::kClick,
                 EventKind::kAddToCart, EventKind::kOrder}) {
    if (name == event_kind_name(k)) return k;
  }
  throw RequestError("unknown event kind '" + name + "'");
}

nlohmann::json event_to_json(const ActivityEvent& event) {
  return {{"ts", event.timestamp_us},
          {"request_id", event.request_id},
          {"kind", event_kind_name(event.kind)},
          {"payload", event.payload}};
}

ActivityEvent event_from_json(const nlohmann::json& j) {
  ActivityEvent e;
  e.timestamp_us = j.at("ts").get<std::int64_t>();
  e.request_id = j.at("request_id").get<std::string>();
  e.kind = parse_event_kind(j.at("kind").get<std::string>());
  e.payload = j.at("payload");
  return e;
}

ActivityLog::ActivityLog(const std::string& path) : path_(path), out_(path, std::ios::app) {
  if (!out_) throw std::runtime_error("cannot open activity log " + path);
  worker_ = std::thread([this] { run(); });
}

ActivityLog::~ActivityLog() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  wake_.notify_all();
  worker_.join();
}

void ActivityLog::append(ActivityEvent event) {
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::duration_cast<std::chrono::microseconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    last_ts_ = std::max<std::int64_t>(now, last_ts_ + 1);
    event.timestamp_us = last_ts_;
    queue_.push_back(std::move(event));
    ++appended_;
  }
  wake_.notify_one();
}

void ActivityLog::flush() {
  std::unique_lock lock(mutex_);
  drained_.wait(lock, [&] { return written_ == appended_; });
}

std::size_t ActivityLog::appended() const {
  std::lock_guard lock(mutex_);
  return appended_;
}

void ActivityLog::run() {
  std::unique_lock lock(mutex_);
  while (true) {
    wake_.wait(lock, [&] { return stop_ || !queue_.empty(); });
    if (queue_.empty() && stop_) break;
    std::deque<ActivityEvent> batch;
    batch.swap(queue_);
    lock.unlock();
    for (const auto& e : batch) out_ << event_to_json(e).dump() << '\n';
    out_.flush();
    lock.lock();
    written_ += batch.size();
    drained_.notify_all();
  }
}

std::vector<ActivityEvent> read_activity_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("activity log not found: " + path);
  std::vector<ActivityEvent> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("activity log: " + std::string(e.what()));
    }
  }
  return out;
}

}  // namespace mmr::engine
