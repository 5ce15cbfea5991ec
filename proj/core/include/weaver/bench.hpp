#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "weaver/csv.hpp"

namespace weaver::bench {

/// One timing comparison row. speedup = t_basic / t_efficient; diffs come
/// from the equivalence check that precedes any timing.
struct BenchRecord {
  std::size_t n = 0;       // spatial nodes
  std::size_t p = 0;       // history length
  std::size_t e = 0;       // feature width, batch folded in (E = B * H * d_head)
  std::size_t h = 0;       // heads
  std::size_t d_head = 0;  // head dim
  std::size_t trials = 0;
  double t_basic_ns = 0.0;      // mean over trials
  double t_efficient_ns = 0.0;  // mean over trials
  double speedup = 0.0;
  double max_abs_diff = 0.0;
  double max_rel_diff = 0.0;
  // stdout extras, not part of the CSV schema
  double t_basic_median_ns = 0.0;
  double t_efficient_median_ns = 0.0;
  bool skipped = false;
  std::string note;
};

struct BenchOptions {
  std::vector<std::size_t> nodes = {8, 16, 32, 64, 128};
  std::vector<std::size_t> heads = {2, 4, 8};
  std::vector<std::size_t> head_dims = {4, 8, 16};
  std::size_t history = 12;  // P
  std::size_t batch = 32;    // folded into the feature width
  std::size_t trials = 20;
  std::size_t warmup = 3;
  double gate_abs_tol = 1e-10;
  std::uint64_t seed = 0;
};

/// Times basic P^2-KMV against the right-handed efficient form on identical
/// random inputs for every grid point. Equivalence is verified before any
/// timing; a failing gate or an allocation failure marks the point skipped.
std::vector<BenchRecord> run_kmv_grid(
    const BenchOptions& opts,
    const std::function<void(const BenchRecord&)>& on_record = nullptr);

/// CSV with exactly the BenchRecord schema columns; skipped points carry no row.
csv::Table to_csv(const std::vector<BenchRecord>& records);

}  // namespace weaver::bench
