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

#include "mmr/losses/losses.h"

#include <cmath>
#include <numeric>

#include "mmr/common/errors.h"
#include "mmr/numcore/ops.h"

namespace mmr::losses {
namespace {

std::vector<std::size_t> diagonal_targets(std::size_t n) {
  std::vector<std::size_t> t(n);
  std::iota(t.begin(), t.end(), std::size_t{0});
  return t;
}

void check_pair(const nc::Tensor& a, const nc::Tensor& b) {
  if (!a.defined() || !b.defined() || a.rows() == 0) {
    throw DomainError("contrastive loss: empty batch");
  }
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("contrastive loss: anchors " + nc::shape_string(a.shape()) +
                     " vs candidates " + nc::shape_string(b.shape()));
  }
}

}  // namespace

void LossConfig::validate() const {
  if (!(gamma > 0.0)) throw DomainError("LossConfig: gamma must be > 0");
  if (!(margin >= 0.0 && margin < 1.0)) {
    throw DomainError("LossConfig: margin must lie in [0, 1)");
  }
}

nc::Tensor info_nce(const ContrastiveBatch& batch) {
  check_pair(batch.queries, batch.items);
  const auto sims = nc::matmul_nt(nc::l2_normalize_rows(batch.queries),
                                  nc::l2_normalize_rows(batch.items));
  const auto targets = diagonal_targets(batch.queries.rows());
  return nc::cross_entropy_rows(sims, targets);
}

nc::Tensor am_info_nce(const ContrastiveBatch& batch, const LossConfig& cfg,
                       const nc::Tensor& extra_negatives) {
  return am_info_nce(batch.queries, batch.items, cfg, extra_negatives);
}

nc::Tensor am_info_nce(const nc::Tensor& anchors, const nc::Tensor& candidates,
                       const LossConfig& cfg, const nc::Tensor& extra_negatives) {
  check_pair(anchors, candidates);
  cfg.validate();
  const auto a = nc::l2_normalize_rows(anchors);
  auto logits = nc::additive_margin(
      nc::matmul_nt(a, nc::l2_normalize_rows(candidates)), cfg.gamma, cfg.margin);
  if (extra_negatives.defined() && extra_negatives.rows() > 0) {
    if (extra_negatives.cols() != anchors.cols()) {
      throw ShapeError("am_info_nce: memory dim mismatch");
    }
    const auto memory = nc::l2_normalize_rows(extra_negatives.detach());
    const std::vector<nc::Tensor> blocks{
        logits, nc::scale(nc::matmul_nt(a, memory), cfg.gamma)};
    logits = nc::concat_cols(blocks);
  }
  const auto targets = diagonal_targets(anchors.rows());
  return nc::cross_entropy_rows(logits, targets);
}

nc::Tensor modality_balance_loss(const nc::Tensor& queries,
                                 const nc::Tensor& fused_no_image,
                                 const nc::Tensor& fused_no_title,
                                 const LossConfig& cfg) {
  const std::vector<nc::Tensor> terms{
      am_info_nce(queries, fused_no_image, cfg),
      am_info_nce(queries, fused_no_title, cfg),
      am_info_nce(fused_no_image, queries, cfg),
      am_info_nce(fused_no_title, queries, cfg),
  };
  return nc::add_scalars(terms);
}

nc::Tensor modality_balance_loss(const nc::Tensor& queries, const Fuser& fuser,
                                 const LossConfig& cfg) {
  return modality_balance_loss(queries, fuser(FusionVariant::kDefaultImage),
                               fuser(FusionVariant::kDefaultTitle), cfg);
}

nc::Tensor XbmBuffer::negatives(Side side) const {
  std::size_t dim = 0, count = 0;
  for (const auto& e : entries_) {
    if (e.side != side) continue;
    dim = e.embedding.size();
    ++count;
  }
  if (count == 0) return {};
  std::vector<double> values;
  values.reserve(count * dim);
  for (const auto& e : entries_) {
    if (e.side == side) values.insert(values.end(), e.embedding.begin(), e.embedding.end());
  }
  return nc::Tensor::from({count, dim}, std::move(values));
}

void XbmBuffer::push_entry(XbmEntry entry) {
  if (capacity_ == 0) return;
  entries_.push_back(std::move(entry));
  while (entries_.size() > capacity_) entries_.pop_front();
}

void XbmBuffer::push(const nc::Tensor& embeddings,
                     std::span<const std::int64_t> class_ids, Side side) {
  if (class_ids.size() != embeddings.rows()) {
    throw ShapeError("XbmBuffer::push: class id count mismatch");
  }
  const auto normalized = nc::l2_normalize_rows(embeddings.detach());
  const std::size_t d = normalized.cols();
  for (std::size_t i = 0; i < normalized.rows(); ++i) {
    XbmEntry e;
    e.embedding.assign(normalized.data().begin() + i * d,
                       normalized.data().begin() + (i + 1) * d);
    e.class_id = class_ids[i];
    e.side = side;
    push_entry(std::move(e));
  }
}

nc::Tensor xbm_push_and_negatives(XbmBuffer& xbm, const nc::Tensor& embeddings,
                                  std::span<const std::int64_t> class_ids,
                                  Side side) {
  auto current = xbm.negatives(side);
  xbm.push(embeddings, class_ids, side);
  return current;
}

nc::Tensor final_loss(const nc::Tensor& queries, const Fuser& fuser,
                      XbmBuffer& xbm, std::span<const std::int64_t> class_ids,
                      const LossConfig& cfg, FinalLossBreakdown* breakdown) {
  if (class_ids.size() != queries.rows()) {
    throw ShapeError("final_loss: class id count mismatch");
  }
  const auto fused = fuser(FusionVariant::kFull);
  const auto memory_fused = xbm.negatives(Side::kFusion);
  const auto memory_queries = xbm.negatives(Side::kQuery);

  const std::vector<nc::Tensor> terms{
      am_info_nce(queries, fused, cfg),
      am_info_nce(fused, queries, cfg),
      modality_balance_loss(queries, fuser, cfg),
      am_info_nce(queries, fused, cfg, memory_fused),
      am_info_nce(fused, queries, cfg, memory_queries),
  };
  if (breakdown) {
    breakdown->query_to_fused = terms[0].item();
    breakdown->fused_to_query = terms[1].item();
    breakdown->balance = terms[2].item();
    breakdown->query_to_fused_memory = terms[3].item();
    breakdown->fused_to_query_memory = terms[4].item();
  }
  auto total = nc::add_scalars(terms);

  // Interleave so both lanes age together.
  const auto q = nc::l2_normalize_rows(queries.detach());
  const auto f = nc::l2_normalize_rows(fused.detach());
  const std::size_t d = q.cols();
  for (std::size_t i = 0; i < q.rows(); ++i) {
    xbm.push_entry(XbmEntry{{q.data().begin() + i * d, q.data().begin() + (i + 1) * d},
                            class_ids[i], Side::kQuery});
    xbm.push_entry(XbmEntry{{f.data().begin() + i * d, f.data().begin() + (i + 1) * d},
                            class_ids[i], Side::kFusion});
  }
  return total;
}

}  // namespace mmr::losses
