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

#include "mmr/numcore/gradcheck.h"

#include <cmath>
#include <utility>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"

namespace mmr::nc {
namespace {

double eval_scalar(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: non-finite function value");
  return v;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         (std::abs(analytic) + std::abs(numeric) + 1e-12);
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                  double eps) {
  if (!x.requires_grad()) x = x.clone(true);
  return grad_check_params([&] { return f(x); }, {x}, eps).max_relative_error;
}

GradCheckResult grad_check_params(const std::function<Tensor()>& f,
                                  std::vector<Tensor> params, double eps,
                                  std::size_t max_coords, std::uint64_t seed) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw DomainError("grad_check: eps must lie in (0, 1e-2]");
  }
  for (auto& p : params) p.zero_grad();
  const Tensor y = f();
  if (!std::isfinite(y.item())) {
    throw NumericError("grad_check: non-finite function value");
  }
  y.backward();

  // (param index, coordinate) pairs to compare.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
  }
  if (max_coords > 0 && coords.size() > max_coords) {
    Rng rng(seed);
    rng.shuffle(coords);
    coords.resize(max_coords);
  }

  GradCheckResult result;
  for (const auto& [p, i] : coords) {
    Tensor& t = params[p];
    const double analytic = t.has_grad() ? t.grad()[i] : 0.0;
    auto values = t.mutable_data();
    const double saved = values[i];
    values[i] = saved + eps;
    const double plus = eval_scalar(f);
    values[i] = saved - eps;
    const double minus = eval_scalar(f);
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double err = relative_error(analytic, numeric);
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_analytic = analytic;
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  for (auto& p : params) p.zero_grad();
  return result;
}

}  // namespace mmr::nc
