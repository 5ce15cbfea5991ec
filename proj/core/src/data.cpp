#include "weaver/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace weaver::data {

namespace {

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
long days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const long era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = unsigned(y - era * 400);
  const unsigned doy = (153u * unsigned(m + (m > 2 ? -3 : 9)) + 2u) / 5u + unsigned(d) - 1u;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + long(doe) - 719468;
}

int iso_weekday(long days_since_epoch) {
  // 1970-01-01 was a Thursday (ISO 4).
  long w = (days_since_epoch + 3) % 7;
  if (w < 0) w += 7;
  return int(w) + 1;
}

struct ParsedStamp {
  long minutes_since_epoch;
  Timestamp ts;
};

ParsedStamp parse_iso8601(const std::string& s, std::size_t row) {
  // YYYY-MM-DD[T ]HH:MM[:SS]
  int y, mo, d, h, mi, sec = 0;
  char sep;
  std::istringstream in(s);
  in >> y;
  if (in.get() != '-') throw ValueError("csv: bad timestamp '" + s + "' at row " + std::to_string(row));
  in >> mo;
  if (in.get() != '-') throw ValueError("csv: bad timestamp '" + s + "' at row " + std::to_string(row));
  in >> d;
  sep = char(in.get());
  if (sep != 'T' && sep != ' ') {
    throw ValueError("csv: bad timestamp '" + s + "' at row " + std::to_string(row));
  }
  in >> h;
  if (in.get() != ':') throw ValueError("csv: bad timestamp '" + s + "' at row " + std::to_string(row));
  in >> mi;
  if (in.peek() == ':') {
    in.get();
    in >> sec;
  }
  if (!in || h < 0 || h > 23 || mi < 0 || mi > 59 || sec != 0) {
    throw ValueError("csv: bad timestamp '" + s + "' at row " + std::to_string(row));
  }
  const long days = days_from_civil(y, mo, d);
  ParsedStamp out;
  out.minutes_since_epoch = days * 1440 + h * 60 + mi;
  out.ts.minute_of_day = h * 60 + mi;
  out.ts.day_of_week = iso_weekday(days);
  return out;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void TrafficSeries::validate() const {
  if (values.rank() != 3 || mask.shape() != values.shape()) {
    throw ShapeError("TrafficSeries: values and mask must be S x N x C with equal shapes");
  }
  if (timestamps.size() != values.dim(0)) {
    throw ShapeError("TrafficSeries: timestamp count does not match steps");
  }
  for (double m : mask.values()) {
    if (m != 0.0 && m != 1.0) throw ValueError("TrafficSeries: mask entries must be 0/1");
  }
}

TrafficSeries load_csv(const std::string& path, const std::optional<std::string>& mask_path) {
  std::ifstream in(path);
  if (!in) throw ValueError("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValueError("load_csv: empty file " + path);
  auto header = split_line(line);
  if (header.size() < 2 || header[0] != "timestamp") {
    throw ValueError("load_csv: header must be 'timestamp,<node>,...'");
  }
  const std::size_t n = header.size() - 1;
  std::vector<double> vals, msk;
  std::vector<Timestamp> stamps;
  std::vector<long> minutes;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != n + 1) {
      throw ValueError("load_csv: ragged row " + std::to_string(row) + " (" +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(n + 1) + ")");
    }
    auto parsed = parse_iso8601(fields[0], row);
    if (!minutes.empty() && parsed.minutes_since_epoch <= minutes.back()) {
      throw ValueError("load_csv: timestamps not strictly increasing at row " +
                       std::to_string(row));
    }
    minutes.push_back(parsed.minutes_since_epoch);
    stamps.push_back(parsed.ts);
    for (std::size_t j = 0; j < n; ++j) {
      const std::string& f = fields[j + 1];
      if (f.empty()) {
        vals.push_back(0.0);
        msk.push_back(0.0);
      } else {
        vals.push_back(std::stod(f));
        msk.push_back(1.0);
      }
    }
  }
  if (minutes.size() < 2) throw ValueError("load_csv: need at least two rows");
  const long cadence = minutes[1] - minutes[0];
  for (std::size_t i = 2; i < minutes.size(); ++i) {
    if (minutes[i] - minutes[i - 1] != cadence) {
      throw ValueError("load_csv: cadence violation at row " + std::to_string(i + 2));
    }
  }
  const std::size_t s = minutes.size();
  TrafficSeries series;
  series.values = Tensor({s, n, 1}, std::move(vals));
  series.mask = Tensor({s, n, 1}, std::move(msk));
  series.timestamps = std::move(stamps);
  series.channel_names = {"speed"};
  series.cadence_minutes = int(cadence);

  if (mask_path) {
    std::ifstream min(*mask_path);
    if (!min) throw ValueError("load_csv: cannot open mask " + *mask_path);
    std::string mline;
    std::getline(min, mline);  // header
    std::size_t i = 0;
    while (std::getline(min, mline)) {
      if (mline.empty()) continue;
      auto fields = split_line(mline);
      if (fields.size() != n + 1) throw ValueError("load_csv: ragged mask row");
      if (i >= s) throw ValueError("load_csv: mask has more rows than data");
      for (std::size_t j = 0; j < n; ++j) {
        const double m = std::stod(fields[j + 1]);
        if (m != 0.0 && m != 1.0) throw ValueError("load_csv: mask entries must be 0/1");
        series.mask[i * n + j] = std::min(series.mask[i * n + j], m);
      }
      ++i;
    }
    if (i != s) throw ValueError("load_csv: mask row count mismatch");
  }
  series.validate();
  return series;
}

ScalerStats fit_scaler(const TrafficSeries& train) {
  train.validate();
  const std::size_t c = train.channels();
  const std::size_t sn = train.steps() * train.nodes();
  ScalerStats stats;
  stats.mean.assign(c, 0.0);
  stats.stddev.assign(c, 0.0);
  stats.observed.assign(c, 0);
  for (std::size_t i = 0; i < sn; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      if (train.mask[i * c + k] != 0.0) {
        stats.mean[k] += train.values[i * c + k];
        stats.observed[k]++;
      }
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (stats.observed[k] == 0) {
      throw ValueError("fit_scaler: channel " + std::to_string(k) + " has no observed entries");
    }
    stats.mean[k] /= double(stats.observed[k]);
  }
  for (std::size_t i = 0; i < sn; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      if (train.mask[i * c + k] != 0.0) {
        const double d = train.values[i * c + k] - stats.mean[k];
        stats.stddev[k] += d * d;
      }
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    stats.stddev[k] = std::sqrt(stats.stddev[k] / double(stats.observed[k]));
  }
  return stats;
}

Tensor standardize(const Tensor& x, const Tensor& mask, const ScalerStats& stats) {
  if (x.shape() != mask.shape()) throw ShapeError("standardize: mask shape mismatch");
  const std::size_t c = x.shape().back();
  if (c != stats.mean.size()) throw ShapeError("standardize: channel count mismatch");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t k = i % c;
    out[i] = mask[i] * (x[i] - stats.mean[k]) / (stats.stddev[k] + stats.eps);
  }
  return out;
}

Tensor invert(const Tensor& x_std, const ScalerStats& stats) {
  const std::size_t c = x_std.shape().back();
  if (c != stats.mean.size()) throw ShapeError("invert: channel count mismatch");
  Tensor out(x_std.shape());
  for (std::size_t i = 0; i < x_std.size(); ++i) {
    const std::size_t k = i % c;
    out[i] = x_std[i] * (stats.stddev[k] + stats.eps) + stats.mean[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

WindowedSplit::WindowedSplit(Tensor values_raw, Tensor values_std, Tensor mask,
                             std::vector<Timestamp> timestamps, std::size_t history,
                             std::size_t horizon)
    : values_raw_(std::move(values_raw)),
      values_std_(std::move(values_std)),
      mask_(std::move(mask)),
      timestamps_(std::move(timestamps)),
      history_(history),
      horizon_(horizon) {}

std::size_t WindowedSplit::window_count() const {
  if (empty()) return 0;
  const std::size_t s = values_raw_.dim(0);
  return s >= history_ + horizon_ ? s - history_ - horizon_ + 1 : 0;
}

namespace {

Tensor slice_steps(const Tensor& t, std::size_t start, std::size_t len) {
  const std::size_t per = t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = len;
  Tensor out(shape);
  std::copy(t.data() + start * per, t.data() + (start + len) * per, out.data());
  return out;
}

}  // namespace

Window WindowedSplit::window(std::size_t i) const {
  if (i >= window_count()) throw ValueError("WindowedSplit: window index out of range");
  Window w;
  w.x_raw = slice_steps(values_raw_, i, history_);
  w.x_std = slice_steps(values_std_, i, history_);
  w.x_mask = slice_steps(mask_, i, history_);
  w.y_raw = slice_steps(values_raw_, i + history_, horizon_);
  w.y_mask = slice_steps(mask_, i + history_, horizon_);
  w.x_time.assign(timestamps_.begin() + long(i), timestamps_.begin() + long(i + history_));
  w.y_time.assign(timestamps_.begin() + long(i + history_),
                  timestamps_.begin() + long(i + history_ + horizon_));
  return w;
}

SplitDataset split_and_slice(const TrafficSeries& series, std::size_t history,
                             std::size_t horizon, double train_frac, double val_frac) {
  series.validate();
  if (history < 1 || horizon < 1) throw ValueError("split_and_slice: P and Q must be >= 1");
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0) {
    throw ValueError("split_and_slice: bad split fractions");
  }
  const std::size_t s = series.steps();
  const std::size_t n_train = std::size_t(std::floor(train_frac * double(s)));
  const std::size_t n_val = std::size_t(std::floor(val_frac * double(s)));
  const std::size_t n_test = s - n_train - n_val;

  if (n_train == 0) throw ValueError("split_and_slice: empty training split");

  // Leakage guard: statistics come from the training slice alone.
  TrafficSeries train_slice;
  train_slice.values = slice_steps(series.values, 0, n_train);
  train_slice.mask = slice_steps(series.mask, 0, n_train);
  train_slice.timestamps.assign(series.timestamps.begin(),
                                series.timestamps.begin() + long(n_train));
  train_slice.cadence_minutes = series.cadence_minutes;
  ScalerStats stats = fit_scaler(train_slice);

  auto make_split = [&](std::size_t start, std::size_t len, const char* name) {
    if (len == 0) return WindowedSplit();
    if (len < history + horizon) {
      throw ValueError(std::string("split_and_slice: ") + name +
                       " split too short for one window (" + std::to_string(len) +
                       " steps, need " + std::to_string(history + horizon) + ")");
    }
    Tensor raw = slice_steps(series.values, start, len);
    Tensor mask = slice_steps(series.mask, start, len);
    Tensor std_vals = standardize(raw, mask, stats);
    std::vector<Timestamp> ts(series.timestamps.begin() + long(start),
                              series.timestamps.begin() + long(start + len));
    return WindowedSplit(std::move(raw), std::move(std_vals), std::move(mask), std::move(ts),
                         history, horizon);
  };
  SplitDataset out;
  out.stats = stats;
  out.train = make_split(0, n_train, "train");
  out.val = make_split(n_train, n_val, "val");
  out.test = make_split(n_train + n_val, n_test, "test");
  return out;
}

// ---------------------------------------------------------------------------
// synthetic series
// ---------------------------------------------------------------------------

TrafficSeries synth_series(const SynthSpec& spec) {
  if (spec.nodes < 1 || spec.days < 1) throw ValueError("synth_series: N and D must be >= 1");
  if (spec.missing_rate < 0.0 || spec.missing_rate >= 1.0) {
    throw ValueError("synth_series: missing rate must lie in [0, 1)");
  }
  Rng rng(spec.seed);
  const std::size_t per_day = std::size_t(1440 / spec.cadence_minutes);
  const std::size_t s = per_day * spec.days;
  const std::size_t n = spec.nodes;

  struct NodeProfile {
    double base, am_amp, pm_amp, am_width, pm_width;
  };
  std::vector<NodeProfile> profile(n);
  for (auto& pr : profile) {
    pr.base = rng.uniform(55.0, 70.0);
    pr.am_amp = rng.uniform(15.0, 25.0);
    pr.pm_amp = rng.uniform(15.0, 25.0);
    pr.am_width = rng.uniform(60.0, 100.0);
    pr.pm_width = rng.uniform(60.0, 100.0);
  }

  TrafficSeries series;
  series.values = Tensor({s, n, 1});
  series.mask = Tensor::full({s, n, 1}, 1.0);
  series.timestamps.resize(s);
  series.channel_names = {"speed"};
  series.cadence_minutes = spec.cadence_minutes;

  for (std::size_t i = 0; i < s; ++i) {
    const int minute = int((i * std::size_t(spec.cadence_minutes)) % 1440);
    const int day = int(i / per_day);
    const int dow = day % 7 + 1;  // series starts on a Monday
    series.timestamps[i] = Timestamp{minute, dow};
    const bool weekend = dow >= 6;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& pr = profile[j];
      const double am = std::exp(-0.5 * std::pow((minute - 480.0) / pr.am_width, 2.0));
      const double pm = std::exp(-0.5 * std::pow((minute - 1050.0) / pr.pm_width, 2.0));
      const double dip_scale = weekend ? 0.85 : 1.0;
      double v = pr.base - dip_scale * (pr.am_amp * am + pr.pm_amp * pm);
      if (spec.noise > 0.0) v += spec.noise * rng.normal();
      series.values[(i * n + j)] = v;
    }
  }
  if (spec.missing_rate > 0.0) {
    for (auto& m : series.mask.values()) {
      if (rng.uniform() < spec.missing_rate) m = 0.0;
    }
    for (std::size_t i = 0; i < series.values.size(); ++i) {
      if (series.mask[i] == 0.0) series.values[i] = 0.0;
    }
  }
  return series;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

Metrics::Metrics(std::size_t horizon)
    : abs_err_(horizon, 0.0),
      sq_err_(horizon, 0.0),
      pct_err_(horizon, 0.0),
      count_(horizon, 0),
      pct_count_(horizon, 0) {
  if (horizon < 1) throw ValueError("Metrics: horizon must be >= 1");
}

void Metrics::add(const Tensor& y, const Tensor& y_hat, const Tensor& mask) {
  if (y.shape() != y_hat.shape() || y.shape() != mask.shape() || y.rank() != 3) {
    throw ShapeError("Metrics::add: expects matching Q x N x C tensors");
  }
  const std::size_t q = y.dim(0);
  if (q != abs_err_.size()) throw ShapeError("Metrics::add: horizon mismatch");
  const std::size_t per = y.dim(1) * y.dim(2);
  for (std::size_t step = 0; step < q; ++step) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t idx = step * per + i;
      if (mask[idx] == 0.0) continue;
      const double err = y[idx] - y_hat[idx];
      abs_err_[step] += std::abs(err);
      sq_err_[step] += err * err;
      count_[step]++;
      if (y[idx] != 0.0) {
        pct_err_[step] += std::abs(err / y[idx]);
        pct_count_[step]++;
      }
    }
  }
}

MetricRow Metrics::finish(std::size_t idx) const {
  MetricRow row;
  row.count = count_[idx];
  if (row.count == 0) throw ValueError("Metrics: no valid entries at step " + std::to_string(idx));
  row.mae = abs_err_[idx] / double(count_[idx]);
  row.rmse = std::sqrt(sq_err_[idx] / double(count_[idx]));
  row.mape_pct = pct_count_[idx] > 0 ? 100.0 * pct_err_[idx] / double(pct_count_[idx]) : 0.0;
  return row;
}

MetricRow Metrics::step(std::size_t q) const {
  if (q >= abs_err_.size()) throw ValueError("Metrics::step: out of range");
  return finish(q);
}

MetricRow Metrics::all() const {
  MetricRow row;
  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0;
  std::size_t cnt = 0, pcnt = 0;
  for (std::size_t i = 0; i < abs_err_.size(); ++i) {
    abs_sum += abs_err_[i];
    sq_sum += sq_err_[i];
    pct_sum += pct_err_[i];
    cnt += count_[i];
    pcnt += pct_count_[i];
  }
  if (cnt == 0) throw ValueError("Metrics: no valid entries");
  row.count = cnt;
  row.mae = abs_sum / double(cnt);
  row.rmse = std::sqrt(sq_sum / double(cnt));
  row.mape_pct = pcnt > 0 ? 100.0 * pct_sum / double(pcnt) : 0.0;
  return row;
}

std::vector<std::pair<std::string, std::size_t>> Metrics::horizon_labels(
    std::size_t horizon, int cadence_minutes) {
  std::vector<std::pair<std::string, std::size_t>> out;
  for (int minutes : {15, 30, 60}) {
    if (minutes % cadence_minutes != 0) continue;
    const std::size_t step = std::size_t(minutes / cadence_minutes);
    if (step >= 1 && step <= horizon) {
      out.emplace_back(std::to_string(minutes) + "min", step - 1);
    }
  }
  if (out.empty()) {
    for (std::size_t q = 0; q < horizon; ++q) {
      out.emplace_back("step" + std::to_string(q + 1), q);
    }
  }
  return out;
}

}  // namespace weaver::data
