#pragma once

#include <optional>
#include <string>
#include <vector>

#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

namespace weaver::data {

/// Per-step clock features. day_of_week is ISO (1 = Monday .. 7 = Sunday).
struct Timestamp {
  int minute_of_day = 0;
  int day_of_week = 1;
};

struct TrafficSeries {
  Tensor values;  // S x N x C
  Tensor mask;    // S x N x C, entries in {0, 1}
  std::vector<Timestamp> timestamps;
  std::vector<std::string> channel_names;
  int cadence_minutes = 5;

  std::size_t steps() const { return values.dim(0); }
  std::size_t nodes() const { return values.dim(1); }
  std::size_t channels() const { return values.dim(2); }
  void validate() const;
};

/// Per-channel masked statistics, fitted on the training split only.
struct ScalerStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // biased
  std::vector<std::size_t> observed;
  double eps = 1e-8;
};

/// CSV layout: header `timestamp,node_0,...`; ISO-8601 timestamps at a fixed
/// cadence; empty cells are masked out. The optional mask CSV has the same
/// shape with {0,1} entries.
TrafficSeries load_csv(const std::string& path,
                       const std::optional<std::string>& mask_path = std::nullopt);

ScalerStats fit_scaler(const TrafficSeries& train);
/// Masked standardization: mask * (x - mu) / (sigma + eps). Masked entries
/// come out zero.
Tensor standardize(const Tensor& x, const Tensor& mask, const ScalerStats& stats);
Tensor invert(const Tensor& x_std, const ScalerStats& stats);

struct Window {
  Tensor x_std;   // P x N x C
  Tensor x_raw;   // P x N x C
  Tensor y_raw;   // Q x N x C
  Tensor x_mask;  // P x N x C
  Tensor y_mask;  // Q x N x C
  std::vector<Timestamp> x_time;
  std::vector<Timestamp> y_time;
};

/// One chronological contiguous slice of the series, windowed at stride 1.
/// Windows never cross split boundaries.
class WindowedSplit {
 public:
  WindowedSplit() = default;
  WindowedSplit(Tensor values_raw, Tensor values_std, Tensor mask,
                std::vector<Timestamp> timestamps, std::size_t history,
                std::size_t horizon);

  std::size_t steps() const { return empty() ? 0 : values_raw_.dim(0); }
  bool empty() const { return values_raw_.rank() == 0; }
  /// max(S - P - Q + 1, 0)
  std::size_t window_count() const;
  Window window(std::size_t i) const;
  const Tensor& raw() const { return values_raw_; }
  const Tensor& mask() const { return mask_; }

 private:
  Tensor values_raw_, values_std_, mask_;
  std::vector<Timestamp> timestamps_;
  std::size_t history_ = 0, horizon_ = 0;
};

struct SplitDataset {
  WindowedSplit train, val, test;
  ScalerStats stats;
};

/// Chronological split (default 70:10:20, floor semantics on train and val,
/// remainder to test), scaler fitted on the training slice, then windowing.
SplitDataset split_and_slice(const TrafficSeries& series, std::size_t history,
                             std::size_t horizon, double train_frac = 0.7,
                             double val_frac = 0.1);

struct SynthSpec {
  std::size_t nodes = 6;
  std::size_t days = 7;
  int cadence_minutes = 5;
  double missing_rate = 0.0;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

/// Desk-scale synthetic speed series: per-node baseline minus two Gaussian
/// rush-hour dips, weekend relief, plus noise. Deterministic per seed.
TrafficSeries synth_series(const SynthSpec& spec);

struct MetricRow {
  double mae = 0.0;
  double mape_pct = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// Accumulates masked forecast errors per horizon step. MAPE excludes
/// entries with a zero target.
class Metrics {
 public:
  explicit Metrics(std::size_t horizon);
  void add(const Tensor& y, const Tensor& y_hat, const Tensor& mask);
  MetricRow step(std::size_t q) const;  // 0-based horizon step
  MetricRow all() const;
  std::size_t horizon() const { return abs_err_.size(); }
  /// (label, 0-based step) pairs; with 5-minute cadence steps 3/6/12 carry
  /// the 15/30/60 min labels when the horizon is deep enough.
  static std::vector<std::pair<std::string, std::size_t>> horizon_labels(
      std::size_t horizon, int cadence_minutes);

 private:
  MetricRow finish(std::size_t idx) const;
  std::vector<double> abs_err_, sq_err_, pct_err_;
  std::vector<std::size_t> count_, pct_count_;
};

}  // namespace weaver::data
