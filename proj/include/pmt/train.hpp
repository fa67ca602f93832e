#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "pmt/checkpoint.hpp"
#include "pmt/data.hpp"
#include "pmt/model.hpp"
#include "pmt/ops.hpp"
#include "pmt/train_config.hpp"

namespace pmt {

// ---------------------------------------------------------------------------
// optimizer and schedule
// ---------------------------------------------------------------------------

template <typename S>
struct AdamState {
  std::vector<std::vector<S>> m, v;
  long long step_count = 0;
};

template <typename S>
void adam_init(AdamState<S>& state, const std::vector<Tensor<S>>& params) {
  state.m.clear();
  state.v.clear();
  state.step_count = 0;
  for (const auto& p : params) {
    state.m.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
    state.v.emplace_back(static_cast<std::size_t>(p.numel()), S(0));
  }
}

// Standard bias-corrected first/second-moment update. Parameters whose
// requires_grad flag is off are skipped entirely (values and moments both
// untouched), which is what keeps frozen gates bit-identical.
template <typename S>
void adam_step(std::vector<Tensor<S>>& params, AdamState<S>& state, S lr, S beta1, S beta2,
               S eps) {
  if (state.m.size() != params.size())
    throw ContractError("adam-state-mismatch", "state holds " + std::to_string(state.m.size()) +
                                                   " moments for " + std::to_string(params.size()) +
                                                   " params");
  ++state.step_count;
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1),
                                               static_cast<double>(state.step_count)));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2),
                                               static_cast<double>(state.step_count)));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = params[i];
    if (!p.requires_grad()) continue;
    if (state.m[i].size() != static_cast<std::size_t>(p.numel()))
      throw ContractError("adam-state-mismatch", "moment shape drift at param " + std::to_string(i));
    const S* g = p.grad();
    S* m = state.m[i].data();
    S* v = state.v[i].data();
    S* w = p.data();
    const Index n = p.numel();
    for (Index j = 0; j < n; ++j) {
      m[j] = beta1 * m[j] + (S(1) - beta1) * g[j];
      v[j] = beta2 * v[j] + (S(1) - beta2) * g[j] * g[j];
      const S mhat = m[j] / bc1;
      const S vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// base_lr * (1 - epoch/max_epochs)^power
inline double poly_lr(Index epoch, double base_lr, Index max_epochs, double power) {
  if (epoch < 0 || epoch > max_epochs)
    throw ContractError("epoch-out-of-range", "epoch " + std::to_string(epoch) + " of " +
                                                  std::to_string(max_epochs));
  const double frac = 1.0 - static_cast<double>(epoch) / static_cast<double>(max_epochs);
  return base_lr * std::pow(frac, power);
}

inline double poly_lr(Index epoch, const TrainConfig& cfg) {
  return poly_lr(epoch, cfg.base_lr, cfg.max_epochs, cfg.poly_power);
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> threshold_mask(const Tensor<S>& probs, S threshold) {
  Tensor<S> out(probs.shape());
  for (Index i = 0; i < probs.numel(); ++i)
    out.data()[i] = probs.data()[i] >= threshold ? S(1) : S(0);
  return out;
}

// 2 |A n B| / (|A| + |B|) on exactly-binary masks; 1.0 when both are empty.
template <typename S>
double dice_coefficient(const Tensor<S>& pred, const Tensor<S>& truth) {
  if (!same_shape(pred, truth))
    throw DimensionError("dice: " + shape_str(pred.shape()) + " vs " + shape_str(truth.shape()));
  long long inter = 0, a = 0, b = 0;
  for (Index i = 0; i < pred.numel(); ++i) {
    const S pv = pred.data()[i], tv = truth.data()[i];
    if ((pv != S(0) && pv != S(1)) || (tv != S(0) && tv != S(1)))
      throw ContractError("non-binary-mask", "dice expects {0,1} masks");
    a += pv == S(1);
    b += tv == S(1);
    inter += (pv == S(1)) && (tv == S(1));
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

// Weighted deep-supervision objective. Each term is the per-pixel mean BCE
// of the sigmoid probabilities against the mask downsampled to the head's
// resolution (nearest neighbor).
template <typename S>
Tensor<S> total_supervised_loss(const typename PMTransModel<S>::Outputs& outputs,
                                const Tensor<S>& mask, double w_full, double w_half,
                                double w_quarter, Tape<S>* tape) {
  Tensor<S> loss =
      scale(bce_loss(sigmoid(outputs.full, tape), mask, Reduction::mean, tape),
            static_cast<S>(w_full), tape);
  if (outputs.has_aux) {
    Tensor<S> mask_half = nearest_downsample_mask(mask, 2);
    Tensor<S> mask_quarter = nearest_downsample_mask(mask, 4);
    loss = add(loss,
               scale(bce_loss(sigmoid(outputs.half, tape), mask_half, Reduction::mean, tape),
                     static_cast<S>(w_half), tape),
               tape);
    loss = add(loss,
               scale(bce_loss(sigmoid(outputs.quarter, tape), mask_quarter, Reduction::mean, tape),
                     static_cast<S>(w_quarter), tape),
               tape);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// evaluation: mean per-sample Dice of the thresholded full-resolution output,
// reported in percent
// ---------------------------------------------------------------------------

template <typename S>
double evaluate(PMTransModel<S>& model, const std::vector<SegmentationSample<S>>& samples,
                S threshold = static_cast<S>(0.5)) {
  if (samples.empty()) throw ContractError("empty-dataset", "evaluation needs at least one sample");
  double total = 0.0;
  for (const auto& sample : samples) {
    const Index C = sample.image.dim(0), H = sample.image.dim(1), W = sample.image.dim(2);
    Tensor<S> batch({1, C, H, W});
    std::copy(sample.image.data(), sample.image.data() + sample.image.numel(), batch.data());
    auto out = model.forward(batch, /*training=*/false, nullptr);
    Tensor<S> probs = sigmoid(out.full, nullptr);
    Tensor<S> pred({1, H, W});
    for (Index i = 0; i < pred.numel(); ++i)
      pred.data()[i] = probs.data()[i] >= threshold ? S(1) : S(0);
    total += dice_coefficient(pred, sample.mask);
  }
  return 100.0 * total / static_cast<double>(samples.size());
}

inline std::string format_dice_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", percent);
  return buf;
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

struct EpochStats {
  Index epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_dice = 0.0;  // percent
  bool gates_trainable = false;
  double wallclock_s = 0.0;
};

template <typename S>
struct TrainResult {
  std::vector<EpochStats> history;
  double best_val_dice = -1.0;  // percent
  Index best_epoch = -1;
  std::string best_checkpoint;
};

template <typename S>
using EpochCallback = std::function<void(PMTransModel<S>&, const EpochStats&)>;

namespace detail {

template <typename S>
void dump_divergence(const std::string& out_dir, Index epoch, Index step, double lr,
                     PMTransModel<S>& model) {
  if (out_dir.empty()) return;
  std::ofstream dump(std::filesystem::path(out_dir) / "divergence_dump.txt");
  dump << "epoch=" << epoch << " step=" << step << " lr=" << lr << "\n";
  for (auto& [name, t] : model.named_parameters()) {
    double mx = 0.0;
    bool finite = true;
    for (Index i = 0; i < t.numel(); ++i) {
      const double v = static_cast<double>(t.data()[i]);
      if (!std::isfinite(v)) finite = false;
      mx = std::max(mx, std::abs(v));
    }
    dump << name << " max_abs=" << mx << (finite ? "" : " NON-FINITE") << "\n";
  }
}

}  // namespace detail

// Mini-batch training per the configured protocol: shuffled batches,
// augmentation, polynomial learning-rate decay, Adam, gates frozen for the
// first gate_freeze_epochs epochs, best checkpoint selected on validation
// Dice. Deterministic for a fixed config and seed.
template <typename S>
TrainResult<S> train(PMTransModel<S>& model, const std::vector<SegmentationSample<S>>& dataset,
                     const TrainConfig& cfg, const std::string& out_dir = "",
                     const EpochCallback<S>& callback = {}) {
  cfg.validate();
  if (dataset.empty()) throw ContractError("empty-dataset", "training needs at least one sample");

  // fixed train/validation split from the split seed
  std::vector<Index> order(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) order[i] = static_cast<Index>(i);
  {
    RandomSource split_rng(cfg.split_seed);
    for (Index i = static_cast<Index>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[split_rng.uniform_index(i + 1)]);
  }
  Index val_count = static_cast<Index>(
      std::llround(cfg.val_fraction * static_cast<double>(dataset.size())));
  if (val_count >= static_cast<Index>(dataset.size())) val_count = static_cast<Index>(dataset.size()) - 1;
  std::vector<Index> val_ids(order.begin(), order.begin() + val_count);
  std::vector<Index> train_ids(order.begin() + val_count, order.end());

  std::vector<SegmentationSample<S>> val_set;
  for (Index id : val_ids) val_set.push_back(dataset[static_cast<std::size_t>(id)]);
  if (val_set.empty())  // no held-out samples: validate on the training set
    for (Index id : train_ids) val_set.push_back(dataset[static_cast<std::size_t>(id)]);

  std::vector<Tensor<S>> params = model.parameters();
  AdamState<S> adam;
  adam_init(adam, params);
  RandomSource rng(cfg.seed);

  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(std::filesystem::path(out_dir) / "metrics.csv");
    metrics << "epoch,lr,train_loss,val_dice,gates_trainable,wallclock_s\n";
  }

  TrainResult<S> result;
  const auto t0 = std::chrono::steady_clock::now();
  const Index C = dataset[0].image.dim(0), H = dataset[0].image.dim(1), W = dataset[0].image.dim(2);

  for (Index epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = poly_lr(epoch, cfg);
    const bool gates_on = epoch >= cfg.gate_freeze_epochs;
    model.set_gates_trainable(gates_on);

    for (Index i = static_cast<Index>(train_ids.size()) - 1; i > 0; --i)
      std::swap(train_ids[i], train_ids[rng.uniform_index(i + 1)]);

    double loss_sum = 0.0;
    Index step_count = 0;
    for (std::size_t start = 0; start < train_ids.size(); start += cfg.batch_size) {
      const Index b = std::min<Index>(cfg.batch_size,
                                      static_cast<Index>(train_ids.size() - start));
      Tensor<S> images({b, C, H, W}), masks({b, 1, H, W});
      for (Index s = 0; s < b; ++s) {
        const auto& raw = dataset[static_cast<std::size_t>(train_ids[start + s])];
        SegmentationSample<S> aug = augment_sample(raw, cfg, rng);
        std::copy(aug.image.data(), aug.image.data() + aug.image.numel(),
                  images.data() + s * C * H * W);
        std::copy(aug.mask.data(), aug.mask.data() + aug.mask.numel(),
                  masks.data() + s * H * W);
      }

      for (auto& p : params) p.zero_grad();
      Tape<S> tape;
      auto outputs = model.forward(images, /*training=*/true, &tape);
      Tensor<S> loss = total_supervised_loss<S>(outputs, masks, model.config().w_full,
                                                model.config().w_half, model.config().w_quarter,
                                                &tape);
      const double loss_value = static_cast<double>(loss.data()[0]);
      if (!std::isfinite(loss_value)) {
        detail::dump_divergence(out_dir, epoch, step_count, lr, model);
        throw TrainingDiverged("loss became non-finite at epoch " + std::to_string(epoch) +
                               " step " + std::to_string(step_count));
      }
      tape.backward(loss);
      adam_step(params, adam, static_cast<S>(lr), static_cast<S>(cfg.adam_beta1),
                static_cast<S>(cfg.adam_beta2), static_cast<S>(cfg.adam_eps));
      loss_sum += loss_value;
      ++step_count;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.train_loss = step_count ? loss_sum / static_cast<double>(step_count) : 0.0;
    stats.val_dice = evaluate(model, val_set);
    stats.gates_trainable = gates_on;
    stats.wallclock_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(stats);

    if (metrics.is_open()) {
      metrics << stats.epoch << ',' << stats.lr << ',' << stats.train_loss << ','
              << format_dice_percent(stats.val_dice) << ',' << (gates_on ? 1 : 0) << ','
              << stats.wallclock_s << "\n";
      metrics.flush();
    }
    if (stats.val_dice > result.best_val_dice) {
      result.best_val_dice = stats.val_dice;
      result.best_epoch = epoch;
      if (!out_dir.empty()) {
        result.best_checkpoint = (std::filesystem::path(out_dir) / "best.pmtc").string();
        save_checkpoint(result.best_checkpoint, model);
      }
    }
    if (callback) callback(model, stats);
  }
  return result;
}

}  // namespace pmt
