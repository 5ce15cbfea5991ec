#pragma once

#include <functional>
#include <string>
#include <vector>

#include "weaver/data.hpp"
#include "weaver/model.hpp"

namespace weaver::train {

/// Adam over a flat list of parameter tensors.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainOptions {
  std::size_t epochs = 50;
  std::size_t patience = 10;
  double min_delta = 1e-3;  // minimum validation loss decrease
  double lr = 1e-3;
  double lr_decay = 0.9;  // per epoch
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_mae = 0.0;
  double val_mae = 0.0;
  double best_val = 0.0;
  std::size_t patience_left = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  double initial_val_mae = 0.0;  // untrained model
  std::size_t epochs_run = 0;
  bool early_stopped = false;
};

/// Masked MAE of the model over every window of a split (original scale).
double evaluate_mae(const model::WeaverParameters& params, const model::WeaverConfig& cfg,
                    const data::WindowedSplit& split, const data::ScalerStats& stats);

/// Repeats the last observed history value across the horizon.
Tensor persistence_forecast(const data::Window& w);
/// Masked MAE of the persistence baseline over a split.
double persistence_mae(const data::WindowedSplit& split);

/// Minimizes the masked MAE on original scale with Adam and per-epoch
/// exponential learning-rate decay; early stopping on the validation loss.
/// Throws on a non-finite loss.
TrainResult fit(model::WeaverParameters& params, const model::WeaverConfig& cfg,
                const data::WindowedSplit& train_split, const data::WindowedSplit& val_split,
                const data::ScalerStats& stats, const TrainOptions& opts,
                const std::function<void(const EpochLog&)>& on_epoch = nullptr);

Tensor window_time_features(const data::Window& w);

}  // namespace weaver::train
