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

#include <memory>
#include <string>
#include <thread>

#include "mmr/engine/engine.h"

namespace httplib {
class Server;
}

namespace mmr::engine {

// HTTP/1.1 + JSON front end:
//   POST /search {image_b64 | vector, page_size, request_id?}
//        -> {request_id, items: [{product_id, score, rank}], timings}
//   POST /event  {request_id, kind, product_id} -> {ok}
//   GET  /healthz -> {status, index_counts: {i2i, miem}}
// Malformed requests get 400 with {error}.
class HttpServer {
 public:
  explicit HttpServer(SearchEngine& engine);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds (port 0 picks a free port) and serves on a background thread.
  // Returns the bound port; throws std::runtime_error when binding fails.
  int start(const std::string& host, int port);
  // Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  SearchEngine& engine_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

// JSON body of a search request -> SearchRequest. Throws RequestError.
SearchRequest parse_search_request(const std::string& body, const EngineConfig& cfg);
std::string search_response_json(const SearchResponse& response);

}  // namespace mmr::engine
