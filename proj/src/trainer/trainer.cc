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

#include "mmr/trainer/trainer.h"

#include <chrono>
#include <cmath>
#include <sstream>

#include "mmr/common/errors.h"
#include "mmr/common/rng.h"
#include "mmr/losses/sampler.h"

namespace mmr::trainer {
namespace {

struct Sample {
  const GrayImage* query = nullptr;
  towers::TitleTokens title;
  towers::ItemInput item;
  std::int64_t class_id = 0;
};

std::vector<Sample> prepare(int stage, const towers::TowerModel& model,
                            std::span<const ClickLogTriplet> logs, const TrainConfig& cfg) {
  const auto& mc = model.config();
  std::vector<Sample> out;
  for (const auto& log : logs) {
    if (cfg.drop_noise && log.relation == Relation::kNoise) continue;
    if (log.clicked_images.empty()) throw DomainError("training log without clicked images");
    Sample s;
    s.query = &log.query_image;
    s.title = towers::tokenize_title(log.clicked_title, mc);
    s.class_id = log.class_id;
    if (stage >= 2) {
      const std::size_t k = stage == 2 ? 1 : cfg.k_images;
      const auto images = stage == 2 ? std::span(log.clicked_images).first(1)
                                     : std::span<const GrayImage>(log.clicked_images);
      s.item = towers::ItemInput{s.title, towers::pad_or_truncate(images, k, mc.image_size),
                                 log.class_id};
    }
    out.push_back(std::move(s));
  }
  if (out.empty()) throw DomainError("train_stage: no training samples");
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(int stage, const std::vector<Sample>& samples,
                                                    std::size_t batch_size, Rng& rng) {
  std::vector<std::vector<std::size_t>> out;
  if (stage == 1) {
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i = 0; i + 2 <= order.size(); i += batch_size) {
      const std::size_t end = std::min(order.size(), i + batch_size);
      if (end - i >= 2) out.emplace_back(order.begin() + i, order.begin() + end);
    }
    return out;
  }
  std::vector<std::int64_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(s.class_id);
  for (auto& b : losses::class_based_batches(labels, batch_size, rng)) out.push_back(std::move(b.indices));
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (stage < 1 || stage > 3) throw DomainError("TrainConfig: stage must be 1, 2 or 3");
  if (stage == 3 && k_images < 2) throw DomainError("TrainConfig: stage 3 requires K > 1");
  if (k_images == 0) throw DomainError("TrainConfig: K must be >= 1");
  if (batch_size < 2) throw DomainError("TrainConfig: batch_size must be >= 2");
  if (!(optimizer.lr > 0)) throw DomainError("TrainConfig: lr must be > 0");
  loss.validate();
}

StageResult train_stage(int stage, towers::TowerModel& model, std::span<const ClickLogTriplet> logs,
                        TrainConfig cfg, const ProgressFn& progress) {
  cfg.stage = stage;
  cfg.validate();
  if (stage == 3 && cfg.k_images > model.config().k_images) {
    throw DomainError("train_stage: K exceeds the model's image slots");
  }
  if (stage > 1 && model.trained_stage() < stage - 1 && !cfg.allow_missing_prerequisite) {
    throw StateError("stage " + std::to_string(stage) + " needs a stage " +
                     std::to_string(stage - 1) + " checkpoint (model is at stage " +
                     std::to_string(model.trained_stage()) + ")");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto samples = prepare(stage, model, logs, cfg);
  auto params = model.parameters();
  AdamWState opt;
  losses::XbmBuffer memory(cfg.loss.xbm_capacity);
  Rng rng(cfg.seed);

  StageResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch : epoch_batches(stage, samples, cfg.batch_size, rng)) {
      std::vector<GrayImage> queries;
      std::vector<std::int64_t> class_ids;
      for (std::size_t i : batch) {
        queries.push_back(*samples[i].query);
        class_ids.push_back(samples[i].class_id);
      }
      model.zero_grad();
      nc::Tensor loss;
      const nc::Tensor q = model.query_embeddings(queries);
      if (stage == 1) {
        std::vector<towers::TitleTokens> titles;
        for (std::size_t i : batch) titles.push_back(samples[i].title);
        const nc::Tensor t = model.title_embeddings(titles);
        const std::vector<nc::Tensor> terms{losses::am_info_nce(q, t, cfg.loss),
                                            losses::am_info_nce(t, q, cfg.loss)};
        loss = nc::add_scalars(terms);
      } else {
        std::vector<towers::ItemInput> items;
        for (std::size_t i : batch) items.push_back(samples[i].item);
        const auto parts = model.encode_item_parts(items);
        loss = losses::final_loss(
            q, [&](losses::FusionVariant v) { return model.fuse(parts, v); }, memory, class_ids,
            cfg.loss);
      }
      const double value = loss.item();
      if (!std::isfinite(value)) throw NumericError("train_stage: non-finite loss");
      loss.backward();
      adamw_step(params, opt, cfg.optimizer);
      LossPoint point{step++, stage, value};
      result.curve.push_back(point);
      if (progress) progress(point);
    }
  }
  model.zero_grad();
  model.set_trained_stage(std::max(model.trained_stage(), stage));
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::vector<LossPoint> train_curriculum(towers::TowerModel& model,
                                        std::span<const ClickLogTriplet> logs,
                                        const CurriculumConfig& cfg, const ProgressFn& progress) {
  std::vector<LossPoint> curve;
  const std::size_t epochs[] = {cfg.stage1_epochs, cfg.stage2_epochs, cfg.stage3_epochs};
  for (int stage = 1; stage <= 3; ++stage) {
    TrainConfig tc = cfg.base;
    tc.epochs = epochs[stage - 1];
    auto r = train_stage(stage, model, logs, tc, progress);
    curve.insert(curve.end(), r.curve.begin(), r.curve.end());
  }
  return curve;
}

std::string loss_curve_csv(std::span<const LossPoint> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "step,stage,loss\n";
  for (const auto& p : curve) out << p.step << ',' << p.stage << ',' << p.loss << '\n';
  return out.str();
}

}  // namespace mmr::trainer
