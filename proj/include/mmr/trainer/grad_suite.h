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
#include <string>
#include <vector>

namespace mmr::trainer {

struct GradSuiteConfig {
  std::size_t batch = 4;       // N anchors, at most 8
  std::size_t dim = 8;         // embedding width of the loss-only checks, at most 16
  std::size_t tower_coords = 100; // sampled parameters of the full tower stack
  double eps = 1e-5;
};

struct GradSuiteRow {
  std::string loss;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Central-difference checks of info_nce, am_info_nce (with memory
// negatives), modality_balance_loss and final_loss through a small tower
// model, all drawn from `seed`.
std::vector<GradSuiteRow> run_grad_suite(std::uint64_t seed, const GradSuiteConfig& cfg = {});

}  // namespace mmr::trainer
