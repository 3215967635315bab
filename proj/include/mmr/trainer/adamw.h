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
#include <span>
#include <vector>

#include "mmr/numcore/tensor.h"

namespace mmr::trainer {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t step = 0;

  void reset() {
    m.clear();
    v.clear();
    step = 0;
  }
};

// Decoupled weight decay: p <- p(1 - lr*wd) - lr * m_hat / (sqrt(v_hat) + eps)
// with bias-corrected moments. An empty state is initialized to zeros.
// Throws ShapeError when state or grads do not match params, and
// NumericError (with no parameter touched) on a non-finite gradient.
void adamw_step(std::span<nc::Tensor> params, std::span<const std::vector<double>> grads,
                AdamWState& state, const AdamWConfig& cfg);

// Reads each parameter's accumulated gradient (zero when none).
void adamw_step(std::span<nc::Tensor> params, AdamWState& state, const AdamWConfig& cfg);

}  // namespace mmr::trainer
