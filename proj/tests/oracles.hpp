// Test-only oracles, independent of the implementation paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

namespace oracles {

using weaver::Rng;
using weaver::Shape;
using weaver::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

/// Naive triple-loop batched matmul (no Eigen), broadcasting size-1 batch modes.
inline Tensor bmm_loops(const Tensor& a, const Tensor& b, bool transpose_b) {
  const std::size_t r = a.rank();
  const std::size_t m = a.shape()[r - 2], ka = a.shape()[r - 1];
  const std::size_t b0 = b.shape()[r - 2], b1 = b.shape()[r - 1];
  const std::size_t n = transpose_b ? b0 : b1;
  Shape batch;
  for (std::size_t i = 0; i + 2 < r; ++i) batch.push_back(std::max(a.shape()[i], b.shape()[i]));
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const std::size_t nb = weaver::shape_product(batch);
  auto off = [&](const Tensor& t, std::size_t flat) {
    std::vector<std::size_t> coords(batch.size());
    std::size_t rem = flat;
    for (std::size_t i = batch.size(); i-- > 0;) {
      coords[i] = rem % batch[i];
      rem /= batch[i];
    }
    std::size_t o = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      o = o * t.shape()[i] + (t.shape()[i] == 1 ? 0 : coords[i]);
    }
    return o;
  };
  for (std::size_t nbatch = 0; nbatch < nb; ++nbatch) {
    const double* pa = a.data() + off(a, nbatch) * m * ka;
    const double* pb = b.data() + off(b, nbatch) * b0 * b1;
    double* po = out.data() + nbatch * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < ka; ++k) {
          acc += pa[i * ka + k] * (transpose_b ? pb[j * b1 + k] : pb[k * b1 + j]);
        }
        po[i * n + j] = acc;
      }
    }
  }
  return out;
}

/// Entmax-1.5 via bisection on the thresholded simplex equation.
inline std::vector<double> entmax15_bisect(const std::vector<double>& logits,
                                           double temperature = 1.0) {
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = logits[i] / (2.0 * temperature);
  auto mass = [&](double tau) {
    double s = 0.0;
    for (double v : z) {
      const double u = v - tau;
      if (u > 0.0) s += u * u;
    }
    return s;
  };
  double hi = *std::max_element(z.begin(), z.end());
  double lo = hi - 1.0;
  while (mass(lo) < 1.0) lo -= 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mass(mid) >= 1.0) lo = mid;
    else hi = mid;
  }
  const double tau = 0.5 * (lo + hi);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double u = z[i] - tau;
    p[i] = u > 0.0 ? u * u : 0.0;
  }
  return p;
}

}  // namespace oracles
