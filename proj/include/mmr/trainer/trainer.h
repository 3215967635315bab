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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmr/losses/losses.h"
#include "mmr/towers/model.h"
#include "mmr/trainer/adamw.h"
#include "mmr/trainer/synthetic.h"

namespace mmr::trainer {

struct TrainConfig {
  int stage = 1;
  AdamWConfig optimizer;
  std::size_t batch_size = 8;
  std::size_t epochs = 50;
  std::size_t k_images = 4;  // slots used in stage 3
  losses::LossConfig loss;
  std::uint64_t seed = 1;
  bool drop_noise = false;
  // Train stage n > 1 on weights that have not completed stage n - 1.
  bool allow_missing_prerequisite = false;

  // Throws DomainError on an invalid stage, K or batch size.
  void validate() const;
};

// Per-stage epochs used by train_curriculum.
struct CurriculumConfig {
  TrainConfig base;
  std::size_t stage1_epochs = 50;
  std::size_t stage2_epochs = 50;
  std::size_t stage3_epochs = 30;
};

struct LossPoint {
  std::size_t step = 0;  // within the stage
  int stage = 0;
  double loss = 0.0;
};

struct StageResult {
  std::vector<LossPoint> curve;
  double seconds = 0.0;
};

using ProgressFn = std::function<void(const LossPoint&)>;

// Stage 1 aligns query images with projected titles (no fusion). Stage 2
// optimizes the full objective with class-based batches, cross-batch memory
// and the first clicked image. Stage 3 does the same with K image slots.
// Memory and optimizer state start empty in every stage. Throws StateError
// when the prerequisite stage is missing.
StageResult train_stage(int stage, towers::TowerModel& model,
                        std::span<const ClickLogTriplet> logs, TrainConfig cfg,
                        const ProgressFn& progress = {});

std::vector<LossPoint> train_curriculum(towers::TowerModel& model,
                                        std::span<const ClickLogTriplet> logs,
                                        const CurriculumConfig& cfg,
                                        const ProgressFn& progress = {});

// "step,stage,loss" with a header row.
std::string loss_curve_csv(std::span<const LossPoint> curve);

}  // namespace mmr::trainer
