#include "weaver/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace weaver::train {

Adam::Adam(double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr) {
  if (params.size() != grads.size()) throw ValueError("Adam: param/grad count mismatch");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (g.shape() != p.shape()) throw ShapeError("Adam: gradient shape mismatch");
    for (std::size_t j = 0; j < p.size(); ++j) {
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m_[i][j] / c1;
      const double vhat = v_[i][j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Tensor window_time_features(const data::Window& w) {
  std::vector<double> minutes, dows;
  minutes.reserve(w.x_time.size());
  dows.reserve(w.x_time.size());
  for (const auto& t : w.x_time) {
    minutes.push_back(double(t.minute_of_day));
    dows.push_back(double(t.day_of_week));
  }
  return model::cyclical_encoding(minutes, dows);
}

namespace {

std::optional<Tensor> maybe_time(const model::WeaverConfig& cfg, const data::Window& w) {
  if (!cfg.use_time_metadata) return std::nullopt;
  return window_time_features(w);
}

Tensor predict_raw(const model::WeaverParameters& params, const model::WeaverConfig& cfg,
                   const data::Window& w, const data::ScalerStats& stats) {
  Tensor y_std = model::weaver_forward(w.x_std, maybe_time(cfg, w), params, cfg);
  return data::invert(y_std, stats);
}

}  // namespace

double evaluate_mae(const model::WeaverParameters& params, const model::WeaverConfig& cfg,
                    const data::WindowedSplit& split, const data::ScalerStats& stats) {
  if (split.window_count() == 0) throw ValueError("evaluate_mae: split has no windows");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < split.window_count(); ++i) {
    data::Window w = split.window(i);
    Tensor y_hat = predict_raw(params, cfg, w, stats);
    for (std::size_t j = 0; j < w.y_raw.size(); ++j) {
      if (w.y_mask[j] != 0.0) {
        total += std::abs(y_hat[j] - w.y_raw[j]);
        ++count;
      }
    }
  }
  if (count == 0) throw ValueError("evaluate_mae: no observed target entries");
  return total / double(count);
}

Tensor persistence_forecast(const data::Window& w) {
  const std::size_t p = w.x_raw.dim(0), n = w.x_raw.dim(1), c = w.x_raw.dim(2);
  const std::size_t q = w.y_raw.dim(0);
  Tensor out({q, n, c});
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < c; ++k) {
      // Last observed value in the history; zero when fully masked.
      double last = 0.0;
      for (std::size_t t = p; t-- > 0;) {
        if (w.x_mask[(t * n + j) * c + k] != 0.0) {
          last = w.x_raw[(t * n + j) * c + k];
          break;
        }
      }
      for (std::size_t t = 0; t < q; ++t) out[(t * n + j) * c + k] = last;
    }
  }
  return out;
}

double persistence_mae(const data::WindowedSplit& split) {
  if (split.window_count() == 0) throw ValueError("persistence_mae: split has no windows");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < split.window_count(); ++i) {
    data::Window w = split.window(i);
    Tensor y_hat = persistence_forecast(w);
    for (std::size_t j = 0; j < w.y_raw.size(); ++j) {
      if (w.y_mask[j] != 0.0) {
        total += std::abs(y_hat[j] - w.y_raw[j]);
        ++count;
      }
    }
  }
  if (count == 0) throw ValueError("persistence_mae: no observed target entries");
  return total / double(count);
}

TrainResult fit(model::WeaverParameters& params, const model::WeaverConfig& cfg,
                const data::WindowedSplit& train_split, const data::WindowedSplit& val_split,
                const data::ScalerStats& stats, const TrainOptions& opts,
                const std::function<void(const EpochLog&)>& on_epoch) {
  cfg.validate();
  if (train_split.window_count() == 0) throw ValueError("fit: training split has no windows");
  const bool have_val = val_split.window_count() > 0;

  TrainResult result;
  result.initial_val_mae =
      have_val ? evaluate_mae(params, cfg, val_split, stats) : 0.0;

  Rng shuffle_rng(opts.seed ^ 0x5deece66dULL);
  Rng dropout_rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam;
  auto entries = params.entries();
  std::vector<Tensor*> tensors;
  for (auto& [name, t] : entries) tensors.push_back(t);

  double best_val = result.initial_val_mae;
  std::size_t bad_epochs = 0;

  std::vector<std::size_t> order(train_split.window_count());
  std::iota(order.begin(), order.end(), std::size_t(0));

  for (std::size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
    const double lr = opts.lr * std::pow(opts.lr_decay, double(epoch - 1));
    shuffle_rng.shuffle(order);
    double train_loss_sum = 0.0;
    std::size_t batches = 0;

    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      const std::size_t stop = std::min(order.size(), start + opts.batch);
      ad::Tape tape;
      model::ParamVars pv = model::lease(tape, params, /*requires_grad=*/true);
      ad::Var batch_loss;
      std::size_t used = 0;
      for (std::size_t i = start; i < stop; ++i) {
        data::Window w = train_split.window(order[i]);
        bool any_target = false;
        for (double m : w.y_mask.values()) {
          if (m != 0.0) {
            any_target = true;
            break;
          }
        }
        if (!any_target) continue;
        ad::Var y_std = model::weaver_forward(tape, w.x_std, maybe_time(cfg, w), pv, cfg,
                                              /*training=*/true, dropout_rng);
        // Loss on original scale: inverse-standardize the prediction.
        ad::Var y_raw = y_std;
        {
          Tensor scale_t(w.y_raw.shape());
          Tensor shift_t(w.y_raw.shape());
          const std::size_t c = w.y_raw.shape().back();
          for (std::size_t j = 0; j < scale_t.size(); ++j) {
            scale_t[j] = stats.stddev[j % c] + stats.eps;
            shift_t[j] = stats.mean[j % c];
          }
          y_raw = ad::add(ad::mul(y_std, tape.constant(scale_t)), tape.constant(shift_t));
        }
        ad::Var loss = model::mae_loss(y_raw, w.y_raw, &w.y_mask);
        batch_loss = batch_loss.valid() ? ad::add(batch_loss, loss) : loss;
        ++used;
      }
      if (used == 0) continue;
      batch_loss = ad::scale(batch_loss, 1.0 / double(used));
      const double loss_val = batch_loss.value().item();
      if (!std::isfinite(loss_val)) {
        throw ValueError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batches + 1));
      }
      tape.backward(batch_loss);
      std::vector<Tensor> grads;
      grads.reserve(pv.named.size());
      for (auto& [name, var] : pv.named) grads.push_back(tape.grad(var));
      adam.step(tensors, grads, lr);
      train_loss_sum += loss_val;
      ++batches;
    }

    EpochLog log;
    log.epoch = epoch;
    log.lr = lr;
    log.train_mae = batches > 0 ? train_loss_sum / double(batches) : 0.0;
    log.val_mae = have_val ? evaluate_mae(params, cfg, val_split, stats) : log.train_mae;
    result.epochs_run = epoch;

    const double monitored = log.val_mae;
    if (best_val - monitored > opts.min_delta) {
      best_val = monitored;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
    }
    log.best_val = best_val;
    log.patience_left = bad_epochs >= opts.patience ? 0 : opts.patience - bad_epochs;
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (bad_epochs >= opts.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace weaver::train
