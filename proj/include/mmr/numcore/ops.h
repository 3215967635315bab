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
#include <span>
#include <vector>

#include "mmr/numcore/tensor.h"

namespace mmr::nc {

// Per-position validity flags for a key/value sequence. A position flagged
// false receives zero attention weight from every query.
struct AttentionMask {
  std::vector<bool> valid;

  static AttentionMask all_valid(std::size_t n) {
    return AttentionMask{std::vector<bool>(n, true)};
  }
  static AttentionMask all_invalid(std::size_t n) {
    return AttentionMask{std::vector<bool>(n, false)};
  }
  std::size_t size() const { return valid.size(); }
  std::size_t valid_count() const;
  void append(const AttentionMask& other);
};

// Plain-vector cosine; throws DomainError on a zero-norm input.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// ---- differentiable primitives (all rank-2) ----

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [m,k]x[n,k]^T
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_row(const Tensor& a, const Tensor& row);  // broadcast [1,n]
Tensor scale(const Tensor& a, double factor);
Tensor gelu(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps = 1e-5);

Tensor softmax_rows(const Tensor& m);
Tensor l2_normalize_rows(const Tensor& m);
Tensor mean_rows(const Tensor& m);  // [m,n] -> [1,n]

Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t count);
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);

Tensor sum_all(const Tensor& m);
Tensor sum_squares(const Tensor& m);
Tensor add_scalars(std::span<const Tensor> scalars);

// gamma * (s - margin * I) on the leading square block of s.
Tensor additive_margin(const Tensor& s, double gamma, double margin);
// Mean over rows of -log softmax(row)[target[row]].
Tensor cross_entropy_rows(const Tensor& logits,
                          std::span<const std::size_t> targets);

// Scaled dot-product attention over `heads` equal column groups.
// q: [n,d], k and v: [m,d]; mask has length m.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const AttentionMask& mask);

// Keys carry no bias: it would shift every score of a query row equally and
// so never receives gradient.
struct AttentionParams {
  Tensor wq, bq, wk, wv, bv, wo, bo;
};

// Projects queries from q_tokens and keys/values from kv_tokens, attends,
// and applies the output projection. Output shape equals q_tokens shape.
Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionMask& mask,
                            const AttentionParams& params, std::size_t heads);

}  // namespace mmr::nc
