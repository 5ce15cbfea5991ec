#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "oracles.hpp"
#include "weaver/data.hpp"
#include "weaver/verify.hpp"

using namespace weaver;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) : path(name) {
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("data");

TEST_CASE("load_csv parses values, gaps and timestamps") {
  TempFile f("series_ok.csv",
             "timestamp,node_0,node_1\n"
             "2024-01-01T00:00:00,10.5,20\n"
             "2024-01-01T00:05:00,,21\n"
             "2024-01-01T00:10:00,12.5,22\n");
  auto s = data::load_csv(f.path);
  CHECK(s.steps() == 3);
  CHECK(s.nodes() == 2);
  CHECK(s.channels() == 1);
  CHECK(s.values.at({0, 0, 0}) == 10.5);
  CHECK(s.mask.at({1, 0, 0}) == 0.0);
  CHECK(s.values.at({1, 0, 0}) == 0.0);
  CHECK(s.mask.at({1, 1, 0}) == 1.0);
  CHECK(s.cadence_minutes == 5);
  // 2024-01-01 was a Monday.
  CHECK(s.timestamps[0].day_of_week == 1);
  CHECK(s.timestamps[2].minute_of_day == 10);
}

TEST_CASE("load_csv rejects malformed inputs") {
  TempFile dup("series_dup.csv",
               "timestamp,node_0\n"
               "2024-01-01T00:00:00,1\n"
               "2024-01-01T00:00:00,2\n");
  CHECK_THROWS_AS(data::load_csv(dup.path), ValueError);

  TempFile ragged("series_ragged.csv",
                  "timestamp,node_0,node_1\n"
                  "2024-01-01T00:00:00,1,2\n"
                  "2024-01-01T00:05:00,1\n");
  CHECK_THROWS_AS(data::load_csv(ragged.path), ValueError);

  TempFile cadence("series_cadence.csv",
                   "timestamp,node_0\n"
                   "2024-01-01T00:00:00,1\n"
                   "2024-01-01T00:05:00,2\n"
                   "2024-01-01T00:20:00,3\n");
  CHECK_THROWS_AS(data::load_csv(cadence.path), ValueError);
}

TEST_CASE("load_csv applies an explicit mask file") {
  TempFile f("series_m.csv",
             "timestamp,node_0\n"
             "2024-01-01T00:00:00,10\n"
             "2024-01-01T00:05:00,11\n");
  TempFile m("mask_m.csv",
             "timestamp,node_0\n"
             "2024-01-01T00:00:00,1\n"
             "2024-01-01T00:05:00,0\n");
  auto s = data::load_csv(f.path, m.path);
  CHECK(s.mask.at({0, 0, 0}) == 1.0);
  CHECK(s.mask.at({1, 0, 0}) == 0.0);
}

TEST_CASE("fit_scaler computes the masked biased moments") {
  data::TrafficSeries s;
  s.values = Tensor({3, 1, 1}, {1, 2, 3});
  s.mask = Tensor({3, 1, 1}, {1, 0, 1});
  s.timestamps = {{0, 1}, {5, 1}, {10, 1}};
  auto stats = data::fit_scaler(s);
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.stddev[0] == 1.0);
  CHECK(stats.observed[0] == 2);

  // Constant observed values: sigma = 0, standardization stays finite.
  data::TrafficSeries c;
  c.values = Tensor::full({4, 1, 1}, 7.0);
  c.mask = Tensor::full({4, 1, 1}, 1.0);
  c.timestamps.resize(4);
  auto cs = data::fit_scaler(c);
  CHECK(cs.stddev[0] == 0.0);
  Tensor z = data::standardize(c.values, c.mask, cs);
  for (double v : z.values()) CHECK(std::isfinite(v));

  // Full mask equals the ordinary moments.
  data::TrafficSeries full;
  full.values = Tensor({4, 1, 1}, {1, 2, 3, 4});
  full.mask = Tensor::full({4, 1, 1}, 1.0);
  full.timestamps.resize(4);
  auto fsb = data::fit_scaler(full);
  CHECK(fsb.mean[0] == 2.5);
  CHECK(fsb.stddev[0] == doctest::Approx(std::sqrt(1.25)).epsilon(1e-15));

  // A fully masked channel is an error.
  data::TrafficSeries bad;
  bad.values = Tensor({2, 1, 1}, {1, 2});
  bad.mask = Tensor({2, 1, 1}, {0, 0});
  bad.timestamps.resize(2);
  CHECK_THROWS_AS(data::fit_scaler(bad), ValueError);
}

TEST_CASE("standardize examples and round trip") {
  data::ScalerStats stats;
  stats.mean = {2.0};
  stats.stddev = {1.0};
  stats.observed = {3};
  Tensor x({1, 1, 1}, {3.0});
  Tensor mask = Tensor::full({1, 1, 1}, 1.0);
  CHECK(data::standardize(x, mask, stats).item() == doctest::Approx(1.0).epsilon(1e-7));
  Tensor masked({1, 1, 1}, {3.0});
  Tensor zero_mask({1, 1, 1}, {0.0});
  CHECK(data::standardize(masked, zero_mask, stats).item() == 0.0);

  Rng rng(91);
  Tensor vals = oracles::random_tensor({20, 3, 1}, rng, 10.0, 60.0);
  Tensor m = Tensor::full({20, 3, 1}, 1.0);
  data::TrafficSeries s;
  s.values = vals;
  s.mask = m;
  s.timestamps.resize(20);
  auto st = data::fit_scaler(s);
  Tensor back = data::invert(data::standardize(vals, m, st), st);
  CHECK(max_rel_diff(back, vals, 1.0) <= 1e-6);
}

TEST_CASE("split_and_slice window counts follow the closed forms") {
  data::TrafficSeries s;
  s.values = Tensor({10, 1, 1});
  s.mask = Tensor::full({10, 1, 1}, 1.0);
  for (std::size_t i = 0; i < 10; ++i) s.values[i] = double(i);
  s.timestamps.resize(10);
  for (int i = 0; i < 10; ++i) s.timestamps[std::size_t(i)] = {i * 5, 1};

  // Single split: S - P - Q + 1 windows.
  auto single = data::split_and_slice(s, 2, 2, 1.0, 0.0);
  CHECK(single.train.window_count() == 7);
  CHECK(single.val.empty());
  CHECK(single.test.empty());

  // S = P + Q gives exactly one window.
  data::TrafficSeries tiny;
  tiny.values = Tensor({4, 1, 1}, {1, 2, 3, 4});
  tiny.mask = Tensor::full({4, 1, 1}, 1.0);
  tiny.timestamps.resize(4);
  for (int i = 0; i < 4; ++i) tiny.timestamps[std::size_t(i)] = {i * 5, 1};
  auto one = data::split_and_slice(tiny, 2, 2, 1.0, 0.0);
  CHECK(one.train.window_count() == 1);

  // Ratios on S = 100 produce 70/10/20.
  data::TrafficSeries hundred;
  hundred.values = Tensor({100, 1, 1});
  hundred.mask = Tensor::full({100, 1, 1}, 1.0);
  for (std::size_t i = 0; i < 100; ++i) hundred.values[i] = double(i % 17);
  hundred.timestamps.resize(100);
  for (int i = 0; i < 100; ++i) hundred.timestamps[std::size_t(i)] = {i * 5 % 1440, 1};
  auto ds = data::split_and_slice(hundred, 2, 2);
  CHECK(ds.train.steps() == 70);
  CHECK(ds.val.steps() == 10);
  CHECK(ds.test.steps() == 20);

  // A nonempty split that cannot fit one window is an error.
  CHECK_THROWS_AS(data::split_and_slice(tiny, 2, 2, 0.5, 0.25), ValueError);
}

TEST_CASE("windows align X and Y across the boundary") {
  data::SynthSpec spec;
  spec.nodes = 2;
  spec.days = 1;
  spec.seed = 5;
  auto s = data::synth_series(spec);
  auto ds = data::split_and_slice(s, 4, 3, 1.0, 0.0);
  auto w = ds.train.window(10);
  CHECK(w.x_raw.shape() == Shape{4, 2, 1});
  CHECK(w.y_raw.shape() == Shape{3, 2, 1});
  CHECK(w.y_time.front().minute_of_day ==
        (w.x_time.back().minute_of_day + s.cadence_minutes) % 1440);
  // Window content matches the source series.
  CHECK(w.x_raw.at({0, 0, 0}) == s.values.at({10, 0, 0}));
  CHECK(w.y_raw.at({0, 1, 0}) == s.values.at({14, 1, 0}));
}

TEST_CASE("synthetic series determinism and structure") {
  data::SynthSpec spec;
  spec.nodes = 4;
  spec.days = 4;  // weekdays only, so the signal repeats daily
  spec.noise = 0.0;
  spec.missing_rate = 0.0;
  spec.seed = 1234;
  auto a = data::synth_series(spec);
  auto b = data::synth_series(spec);
  CHECK(max_abs_diff(a.values, b.values) == 0.0);

  const std::size_t per_day = 1440 / 5;
  for (std::size_t i = 0; i < per_day * 3; ++i) {
    for (std::size_t n = 0; n < 4; ++n) {
      CHECK(a.values.at({i, n, 0}) == doctest::Approx(a.values.at({i + per_day, n, 0})));
    }
  }

  // Missingness concentrates near the requested rate.
  data::SynthSpec missing = spec;
  missing.nodes = 10;
  missing.days = 7;
  missing.missing_rate = 0.1;
  auto m = data::synth_series(missing);
  double density = 0.0;
  for (double v : m.mask.values()) density += v;
  density /= double(m.mask.size());
  CHECK(std::abs(density - 0.9) < 0.02);
}

TEST_CASE("metrics hand example and masked exclusion") {
  data::Metrics m(1);
  m.add(Tensor({1, 2, 1}, {10, 20}), Tensor({1, 2, 1}, {12, 18}),
        Tensor::full({1, 2, 1}, 1.0));
  auto row = m.all();
  CHECK(row.mae == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(row.rmse == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(row.mape_pct == doctest::Approx(15.0).epsilon(1e-15));

  // Perfect prediction.
  data::Metrics perfect(2);
  Tensor y({2, 1, 1}, {5, 6});
  perfect.add(y, y, Tensor::full({2, 1, 1}, 1.0));
  auto pr = perfect.all();
  CHECK(pr.mae == 0.0);
  CHECK(pr.rmse == 0.0);
  CHECK(pr.mape_pct == 0.0);

  // Masked-out bad entry is excluded from all three metrics.
  data::Metrics masked(1);
  masked.add(Tensor({1, 2, 1}, {10, 20}), Tensor({1, 2, 1}, {12, 120}),
             Tensor({1, 2, 1}, {1, 0}));
  auto mr = masked.all();
  CHECK(mr.mae == doctest::Approx(2.0));
  CHECK(mr.count == 1);

  // Zero targets never reach the MAPE denominator.
  data::Metrics zt(1);
  zt.add(Tensor({1, 2, 1}, {0, 10}), Tensor({1, 2, 1}, {5, 11}),
         Tensor::full({1, 2, 1}, 1.0));
  CHECK(zt.all().mape_pct == doctest::Approx(10.0));

  data::Metrics empty(1);
  CHECK_THROWS_AS(empty.all(), ValueError);

  auto labels = data::Metrics::horizon_labels(12, 5);
  REQUIRE(labels.size() == 3);
  CHECK(labels[0].first == "15min");
  CHECK(labels[0].second == 2);
  CHECK(labels[2].first == "60min");
  CHECK(labels[2].second == 11);
}

TEST_CASE("verify data suite passes") {
  for (const auto& r : verify::run_suite("data", 4321)) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.pass);
  }
}

TEST_SUITE_END();
