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

#include "mmr/cli/config.h"

#include <charconv>
#include <sstream>

#include "mmr/common/binary_io.h"

namespace mmr::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
  values_ = {
      {"seed", "1"},
      {"data.classes", "200"},
      {"data.items_per_class", "10"},
      {"data.min_images", "1"},
      {"data.max_images", "7"},
      {"data.vocab", "1000"},
      {"data.identical", "0.45"},
      {"data.similar", "0.50"},
      {"data.noise", "0.05"},
      {"data.logs_per_item", "1"},
      {"data.eval_queries", "500"},
      {"data.duplicates", "0.05"},
      {"data.confusable", "true"},
      {"data.clutter", "0.0"},
      {"model.token_dim", "32"},
      {"model.heads", "4"},
      {"model.ffn_dim", "64"},
      {"model.image_layers", "1"},
      {"model.title_layers", "1"},
      {"model.fusion_layers", "2"},
      {"model.output_dim", "32"},
      {"model.max_title_len", "16"},
      {"model.vocab", "1024"},
      {"model.k_images", "4"},
      {"train.stage1_epochs", "50"},
      {"train.stage2_epochs", "50"},
      {"train.stage3_epochs", "30"},
      {"train.batch_size", "64"},
      {"train.lr", "0.001"},
      {"train.weight_decay", "0.01"},
      {"train.gamma", "20"},
      {"train.margin", "0.2"},
      {"train.xbm_capacity", "1024"},
      {"train.drop_noise", "false"},
      {"index.m", "16"},
      {"index.ef_construction", "200"},
      {"index.ef_search", "64"},
      {"index.rebuild_ratio", "0.2"},
      {"engine.fusion_weight", "1.0"},
      {"engine.popularity_weight", "0.0"},
      {"engine.overfetch", "3"},
      {"engine.page_size", "10"},
      {"engine.max_page_size", "100"},
      {"engine.crop_fraction", "1.0"},
      {"serve.host", "127.0.0.1"},
      {"serve.port", "8080"},
      {"lifecycle.start_day", "2024-01-01"},
      {"lifecycle.churn", "0.1"},
      {"lifecycle.retention", "7"},
      {"eval.depth", "100"},
      {"eval.weights", "0,0.25,0.5,1,2,4"},
      {"eval.per_image", "true"},
      {"eval.merge", "false"},
      {"eval.merge_truth", "false"},
      {"eval.k_probe", "10"},
      {"eval.threshold", "0.5"},
      {"eval.threads", "1"},
  };
}

void Config::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  it->second = value;
}

void Config::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      set_assignment(line);
    } catch (const UsageError& e) {
      throw UsageError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

void Config::load_file(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw UsageError("cannot read config file '" + path + "'");
  }
  load_text(text, path);
}

const std::string& Config::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
  return it->second;
}

double Config::number(const std::string& key) const {
  const auto& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": expected a number, got '" + s + "'");
}

std::uint64_t Config::u64(const std::string& key) const {
  const auto& s = str(key);
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw UsageError(key + ": expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

std::size_t Config::size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }

bool Config::flag(const std::string& key) const {
  const auto& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw UsageError(key + ": expected true or false, got '" + s + "'");
}

std::vector<double> Config::numbers(const std::string& key) const {
  std::vector<double> out;
  std::istringstream in(str(key));
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw UsageError(key + ": expected comma separated numbers, got '" + str(key) + "'");
    }
  }
  return out;
}

std::string Config::echo() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

trainer::SyntheticCatalogSpec Config::data_spec() const {
  trainer::SyntheticCatalogSpec s;
  s.classes = size("data.classes");
  s.items_per_class = size("data.items_per_class");
  s.min_images = size("data.min_images");
  s.max_images = size("data.max_images");
  s.vocab_size = size("data.vocab");
  s.identical_share = number("data.identical");
  s.similar_share = number("data.similar");
  s.noise_share = number("data.noise");
  s.logs_per_item = size("data.logs_per_item");
  s.eval_queries = size("data.eval_queries");
  s.duplicate_fraction = number("data.duplicates");
  s.confusable_pairs = flag("data.confusable");
  s.clutter_share = number("data.clutter");
  s.seed = u64("seed");
  return s;
}

towers::TowerConfig Config::model_config() const {
  towers::TowerConfig c;
  c.token_dim = size("model.token_dim");
  c.heads = size("model.heads");
  c.ffn_dim = size("model.ffn_dim");
  c.image_layers = size("model.image_layers");
  c.title_layers = size("model.title_layers");
  c.fusion_layers = size("model.fusion_layers");
  c.output_dim = size("model.output_dim");
  c.max_title_len = size("model.max_title_len");
  c.vocab_size = size("model.vocab");
  c.k_images = size("model.k_images");
  return c;
}

trainer::CurriculumConfig Config::curriculum() const {
  trainer::CurriculumConfig c;
  c.base.batch_size = size("train.batch_size");
  c.base.optimizer.lr = number("train.lr");
  c.base.optimizer.weight_decay = number("train.weight_decay");
  c.base.loss.gamma = number("train.gamma");
  c.base.loss.margin = number("train.margin");
  c.base.loss.xbm_capacity = size("train.xbm_capacity");
  c.base.loss.batch_size = c.base.batch_size;
  c.base.k_images = size("model.k_images");
  c.base.drop_noise = flag("train.drop_noise");
  c.base.seed = u64("seed");
  c.stage1_epochs = size("train.stage1_epochs");
  c.stage2_epochs = size("train.stage2_epochs");
  c.stage3_epochs = size("train.stage3_epochs");
  return c;
}

ann::HnswConfig Config::index_config() const {
  ann::HnswConfig c;
  c.m = size("index.m");
  c.ef_construction = size("index.ef_construction");
  c.ef_search = size("index.ef_search");
  c.rebuild_ratio = number("index.rebuild_ratio");
  c.seed = u64("seed");
  return c;
}

engine::EngineConfig Config::engine_config() const {
  engine::EngineConfig c;
  c.fusion_weight = number("engine.fusion_weight");
  c.popularity_weight = number("engine.popularity_weight");
  c.overfetch = size("engine.overfetch");
  c.default_page_size = size("engine.page_size");
  c.max_page_size = size("engine.max_page_size");
  c.crop_fraction = number("engine.crop_fraction");
  return c;
}

evalkit::EvalConfig Config::eval_config() const {
  evalkit::EvalConfig c;
  c.depth = size("eval.depth");
  c.overfetch = size("engine.overfetch");
  c.fusion_weight = number("engine.fusion_weight");
  c.one_emb_per_image = flag("eval.per_image");
  c.merge_truth = flag("eval.merge_truth");
  c.threads = size("eval.threads");
  return c;
}

}  // namespace mmr::cli
