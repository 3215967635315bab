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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "mmr/numcore/tensor.h"

namespace mmr::nc {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;  // coordinates compared
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function with central
// differences. Relative error per coordinate is
//   |analytic - numeric| / (|analytic| + |numeric| + 1e-12).
// Throws NumericError if f is non-finite at any evaluated point and
// DomainError for eps outside (0, 1e-2].
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps);

// Multi-leaf variant: f closes over `params` and is re-evaluated after each
// perturbation. When max_coords > 0, only that many coordinates are checked,
// drawn deterministically from `seed`.
GradCheckResult grad_check_params(const std::function<Tensor()>& f,
                                  std::vector<Tensor> params, double eps,
                                  std::size_t max_coords = 0,
                                  std::uint64_t seed = 0);

}  // namespace mmr::nc
