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

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmr/annindex/hnsw.h"
#include "mmr/engine/engine.h"
#include "mmr/evalkit/evalkit.h"
#include "mmr/towers/model.h"
#include "mmr/trainer/synthetic.h"
#include "mmr/trainer/trainer.h"

namespace mmr::cli {

// Bad flags, unknown keys or malformed values; maps to exit code 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Flat key=value settings with built-in defaults. Only known keys are
// accepted; later assignments win.
class Config {
 public:
  Config();

  void set(const std::string& key, const std::string& value);
  // "key=value"
  void set_assignment(const std::string& assignment);
  // One assignment per line; '#' starts a comment, blank lines are skipped.
  void load_text(const std::string& text, const std::string& origin = "config");
  void load_file(const std::string& path);

  bool has(const std::string& key) const { return values_.contains(key); }
  const std::string& str(const std::string& key) const;
  double number(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;  // comma separated

  // "key = value" lines in key order.
  std::string echo() const;

  trainer::SyntheticCatalogSpec data_spec() const;
  towers::TowerConfig model_config() const;
  trainer::CurriculumConfig curriculum() const;
  ann::HnswConfig index_config() const;
  engine::EngineConfig engine_config() const;
  evalkit::EvalConfig eval_config() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace mmr::cli
