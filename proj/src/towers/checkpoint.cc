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

#include <algorithm>

#include "mmr/common/binary_io.h"
#include "mmr/common/errors.h"
#include "mmr/towers/model.h"

namespace mmr::towers {
namespace {

constexpr char kMagic[4] = {'M', 'M', 'R', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

std::string serialize_checkpoint(const TowerModel& model) {
  const auto& c = model.config();
  BinaryWriter w;
  w.put_raw(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kVersion);
  for (std::size_t v : {c.image_size, c.patch_size, c.token_dim, c.heads, c.ffn_dim,
                        c.image_layers, c.title_layers, c.fusion_layers, c.output_dim,
                        c.max_title_len, c.vocab_size, c.k_images}) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.put<std::int32_t>(model.trained_stage());
  const auto params = model.named_parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.put_string(name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    w.put_array<double>(t.data());
  }
  return w.release();
}

TowerModel deserialize_checkpoint(std::string_view bytes) {
  BinaryReader r(bytes);
  if (r.get_raw(4) != std::string_view(kMagic, 4)) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  TowerConfig c;
  for (std::size_t* v : {&c.image_size, &c.patch_size, &c.token_dim, &c.heads, &c.ffn_dim,
                         &c.image_layers, &c.title_layers, &c.fusion_layers, &c.output_dim,
                         &c.max_title_len, &c.vocab_size, &c.k_images}) {
    *v = r.get<std::uint32_t>();
  }
  const auto stage = r.get<std::int32_t>();
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw FormatError(std::string("checkpoint: invalid header: ") + e.what());
  }
  TowerModel model(c, 0);
  model.set_trained_stage(stage);
  auto params = model.named_parameters();
  const auto count = r.get<std::uint32_t>();
  if (count != params.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (auto& [name, t] : params) {
    const auto stored = r.get_string();
    if (stored != name) {
      throw FormatError("checkpoint: expected '" + name + "', found '" + stored + "'");
    }
    const auto rank = r.get<std::uint32_t>();
    nc::Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != t.shape()) throw FormatError("checkpoint: shape mismatch for " + name);
    const auto values = r.get_array<double>(t.size());
    std::copy(values.begin(), values.end(), t.mutable_data().begin());
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const TowerModel& model, const std::string& path) {
  write_file(path, serialize_checkpoint(model));
}

TowerModel load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace mmr::towers
