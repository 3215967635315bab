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

#include "mmr/engine/server.h"

#include <httplib.h>
#include <json.hpp>

#include "mmr/common/encoding.h"
#include "mmr/common/errors.h"

namespace mmr::engine {
namespace {

using nlohmann::json;

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const std::string& body) {
  try {
    auto j = json::parse(body);
    if (!j.is_object()) throw RequestError("body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw RequestError(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

SearchRequest parse_search_request(const std::string& body, const EngineConfig& cfg) {
  const json j = parse_body(body);
  SearchRequest r;
  r.page_size = cfg.default_page_size;
  try {
    if (j.contains("request_id")) r.request_id = j.at("request_id").get<std::string>();
    if (j.contains("page_size")) {
      const auto& p = j.at("page_size");
      if (!p.is_number_integer() || p.get<long long>() < 1) {
        throw RequestError("page_size must be a positive integer");
      }
      r.page_size = p.get<std::size_t>();
    }
    if (j.contains("image_b64")) {
      const auto bytes = base64_decode(j.at("image_b64").get<std::string>());
      if (!bytes) throw RequestError("image_b64 is not valid base64");
      auto image = decode_pgm(*bytes);
      if (!image) throw RequestError("image_b64 is not a binary PGM image");
      r.image = std::move(*image);
    }
    if (j.contains("vector")) r.vector = j.at("vector").get<std::vector<float>>();
  } catch (const json::exception& e) {
    throw RequestError(std::string("bad field: ") + e.what());
  }
  return r;
}

std::string search_response_json(const SearchResponse& response) {
  json items = json::array();
  for (const auto& it : response.items) {
    items.push_back({{"product_id", it.product_id}, {"score", it.score}, {"rank", it.rank}});
  }
  json timings = json::object();
  for (const auto& [stage, ms] : response.timings_ms) timings[stage] = ms;
  return json{{"request_id", response.request_id}, {"items", items}, {"timings", timings}}.dump();
}

HttpServer::HttpServer(SearchEngine& engine)
    : engine_(engine), server_(std::make_unique<httplib::Server>()) {
  server_->Post("/search", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const auto request = parse_search_request(req.body, engine_.config());
      res.set_content(search_response_json(engine_.handle_search(request)), "application/json");
    } catch (const RequestError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  });
  server_->Post("/event", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json j = parse_body(req.body);
      std::string request_id, kind, product_id;
      try {
        request_id = j.at("request_id").get<std::string>();
        kind = j.at("kind").get<std::string>();
        product_id = j.at("product_id").get<std::string>();
      } catch (const json::exception& e) {
        throw RequestError(std::string("bad field: ") + e.what());
      }
      engine_.record_event(request_id, parse_event_kind(kind), product_id);
      reply(res, 200, {{"ok", true}});
    } catch (const RequestError& e) {
      reply(res, 400, {{"error", e.what()}});
    }
  });
  server_->Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200,
          {{"status", "ok"},
           {"index_counts",
            {{"i2i", engine_.indexes().i2i.live_count()},
             {"miem", engine_.indexes().miem.live_count()}}}});
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->listen(host, port)) {
    throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }
}

void HttpServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace mmr::engine
