#include "weaver/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <new>

#include "weaver/kron.hpp"
#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

namespace weaver::bench {

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-1.0, 1.0);
  return t;
}

template <class F>
std::vector<double> time_ns(F&& fn, std::size_t trials, std::size_t warmup) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> out;
  out.reserve(trials);
  for (std::size_t i = 0; i < trials; ++i) {
    const auto t0 = clock::now();
    fn();
    const auto t1 = clock::now();
    out.push_back(double(std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count()));
  }
  return out;
}

}  // namespace

std::vector<BenchRecord> run_kmv_grid(
    const BenchOptions& opts, const std::function<void(const BenchRecord&)>& on_record) {
  if (opts.trials < 1) throw ValueError("bench: trials must be >= 1");
  std::vector<BenchRecord> records;
  std::size_t point = 0;
  for (std::size_t n : opts.nodes) {
    for (std::size_t h : opts.heads) {
      for (std::size_t dh : opts.head_dims) {
        BenchRecord rec;
        rec.n = n;
        rec.p = opts.history;
        rec.h = h;
        rec.d_head = dh;
        rec.e = opts.batch * h * dh;
        rec.trials = opts.trials;
        ++point;
        try {
          Rng rng(opts.seed + 0x9e3779b9u * point);
          const std::size_t per_head = opts.batch * dh;  // batch folded into features
          Tensor theta_t = random_tensor({h, opts.history, opts.history}, rng);
          Tensor theta_s = random_tensor({h, n, n}, rng);
          Tensor v = random_tensor({h, per_head, opts.history, n}, rng);
          kron::FactorChain chain({theta_t, theta_s});

          // Equivalence gate before any timing.
          Tensor out_basic = kron::p2kmv_basic(chain, v);
          Tensor out_eff = kron::pkmv_efficient(chain, v);
          rec.max_abs_diff = max_abs_diff(out_basic, out_eff);
          rec.max_rel_diff = max_rel_diff(out_basic, out_eff);
          if (rec.max_abs_diff > opts.gate_abs_tol) {
            rec.skipped = true;
            rec.note = "equivalence gate failed (max abs diff " +
                       csv::format_double(rec.max_abs_diff) + ")";
            records.push_back(rec);
            if (on_record) on_record(rec);
            continue;
          }

          auto basic_ns = time_ns([&] { kron::p2kmv_basic(chain, v); }, opts.trials,
                                   opts.warmup);
          auto eff_ns = time_ns([&] { kron::pkmv_efficient(chain, v); }, opts.trials,
                                 opts.warmup);
          rec.t_basic_ns = mean(basic_ns);
          rec.t_efficient_ns = mean(eff_ns);
          rec.t_basic_median_ns = median(basic_ns);
          rec.t_efficient_median_ns = median(eff_ns);
          rec.speedup = rec.t_efficient_ns > 0.0 ? rec.t_basic_ns / rec.t_efficient_ns : 0.0;
        } catch (const std::bad_alloc&) {
          rec.skipped = true;
          rec.note = "skipped: allocation failed";
        }
        records.push_back(rec);
        if (on_record) on_record(rec);
      }
    }
  }
  return records;
}

csv::Table to_csv(const std::vector<BenchRecord>& records) {
  csv::Table table;
  table.header = {"N",          "P",       "E",
                  "H",          "d_head",  "trials",
                  "t_basic_ns", "t_efficient_ns", "speedup",
                  "max_abs_diff", "max_rel_diff"};
  for (const auto& r : records) {
    if (r.skipped) continue;
    table.append({std::to_string(r.n), std::to_string(r.p), std::to_string(r.e),
                  std::to_string(r.h), std::to_string(r.d_head), std::to_string(r.trials),
                  csv::format_double(r.t_basic_ns), csv::format_double(r.t_efficient_ns),
                  csv::format_double(r.speedup), csv::format_double(r.max_abs_diff),
                  csv::format_double(r.max_rel_diff)});
  }
  return table;
}

}  // namespace weaver::bench
