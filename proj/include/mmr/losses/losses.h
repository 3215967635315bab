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
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "mmr/numcore/tensor.h"

namespace mmr::losses {

struct LossConfig {
  double gamma = 20.0;   // logit scale
  double margin = 0.2;   // additive margin on the positive logit
  std::size_t xbm_capacity = 1024;
  std::size_t batch_size = 8;

  // Throws DomainError unless gamma > 0 and 0 <= margin < 1.
  void validate() const;
};

// N anchors and N positives; row i of `items` is the positive for row i of
// `queries`, every other row is a negative. Rows need not be unit-norm: all
// similarities are computed on L2-normalized copies.
struct ContrastiveBatch {
  nc::Tensor queries;
  nc::Tensor items;
  std::vector<std::int64_t> class_ids;
};

// -mean_i log(e^{s_ii} / sum_j e^{s_ij}) with s the cosine similarity.
nc::Tensor info_nce(const ContrastiveBatch& batch);

// -mean_i log(e^{g(s_ii - m)} / (e^{g(s_ii - m)} + sum_{j!=i} e^{g s_ij}
//                                 + sum_k e^{g s(q_i, extra_k)})).
// `extra_negatives` (optional, [M,d]) extends every anchor's negative set and
// is treated as a constant.
nc::Tensor am_info_nce(const ContrastiveBatch& batch, const LossConfig& cfg,
                       const nc::Tensor& extra_negatives = {});

// Convenience overload: anchors/candidates without class ids.
nc::Tensor am_info_nce(const nc::Tensor& anchors, const nc::Tensor& candidates,
                       const LossConfig& cfg,
                       const nc::Tensor& extra_negatives = {});

enum class FusionVariant {
  kFull,          // F(I, T)
  kDefaultImage,  // F(I^def, T): every image slot masked
  kDefaultTitle,  // F(I, T^def): every title token masked
};

// Produces the fused item embeddings ([N,d]) of the current batch for the
// requested variant.
using Fuser = std::function<nc::Tensor(FusionVariant)>;

nc::Tensor modality_balance_loss(const nc::Tensor& queries,
                                 const nc::Tensor& fused_no_image,
                                 const nc::Tensor& fused_no_title,
                                 const LossConfig& cfg);
nc::Tensor modality_balance_loss(const nc::Tensor& queries, const Fuser& fuser,
                                 const LossConfig& cfg);

// ---- cross-batch memory ----

enum class Side { kQuery, kFusion };

struct XbmEntry {
  std::vector<double> embedding;  // unit-norm
  std::int64_t class_id = 0;
  Side side = Side::kQuery;
};

// FIFO ring over both lanes; `capacity` bounds the total entry count so the
// query and fusion lanes are evicted in lockstep when pushed in pairs.
class XbmBuffer {
 public:
  explicit XbmBuffer(std::size_t capacity) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }
  const std::deque<XbmEntry>& entries() const { return entries_; }

  // Current entries of one lane as a constant [M,d] tensor (undefined when
  // the lane is empty).
  nc::Tensor negatives(Side side) const;

  // Enqueues normalized copies of the rows of `embeddings`.
  void push(const nc::Tensor& embeddings, std::span<const std::int64_t> class_ids,
            Side side);
  void push_entry(XbmEntry entry);

 private:
  std::size_t capacity_;
  std::deque<XbmEntry> entries_;
};

// Returns the lane's current contents, then enqueues the new rows.
nc::Tensor xbm_push_and_negatives(XbmBuffer& xbm, const nc::Tensor& embeddings,
                                  std::span<const std::int64_t> class_ids,
                                  Side side);

struct FinalLossBreakdown {
  double query_to_fused = 0.0;
  double fused_to_query = 0.0;
  double balance = 0.0;
  double query_to_fused_memory = 0.0;
  double fused_to_query_memory = 0.0;
};

// L(Q,F) + L(F,Q) + L_balance + L(Q,F_m) + L(F,Q_m); afterwards the batch's
// queries and fused embeddings are pushed into `xbm` (query, fusion pairs).
nc::Tensor final_loss(const nc::Tensor& queries, const Fuser& fuser,
                      XbmBuffer& xbm, std::span<const std::int64_t> class_ids,
                      const LossConfig& cfg,
                      FinalLossBreakdown* breakdown = nullptr);

}  // namespace mmr::losses
