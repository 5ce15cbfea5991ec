#include "weaver/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace weaver::attn {

namespace {

void check_qk(const QueryKeyBatch& qk) {
  if (qk.q.rank() != 3 || qk.k.rank() != 3) {
    throw ShapeError("attention: Q and K must be H x n x d_head");
  }
  if (qk.q.dim(0) != qk.k.dim(0) || qk.q.dim(2) != qk.k.dim(2)) {
    throw ShapeError("attention: head count or head dim mismatch, Q " +
                     shape_str(qk.q.shape()) + " vs K " + shape_str(qk.k.shape()));
  }
  if (qk.eps0 <= 0.0) throw ValueError("attention: eps0 must be positive");
}

std::vector<double> sq_norms(const Tensor& t) {
  const std::size_t rows = t.dim(0) * t.dim(1), d = t.dim(2);
  std::vector<double> out(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = t.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) out[r] += v[j] * v[j];
  }
  return out;
}

}  // namespace

Tensor ctc(const QueryKeyBatch& qk) {
  check_qk(qk);
  const std::size_t h = qk.q.dim(0), r = qk.q.dim(1), s = qk.k.dim(1), d = qk.q.dim(2);
  const auto q2 = sq_norms(qk.q);
  const auto k2 = sq_norms(qk.k);
  Tensor out({h, r, s});
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < r; ++i) {
      const double* qi = qk.q.data() + (hh * r + i) * d;
      for (std::size_t j = 0; j < s; ++j) {
        const double* kj = qk.k.data() + (hh * s + j) * d;
        double dot = 0.0;
        for (std::size_t x = 0; x < d; ++x) dot += qi[x] * kj[x];
        out[(hh * r + i) * s + j] =
            dot / (q2[hh * r + i] + k2[hh * s + j] - dot + qk.eps0);
      }
    }
  }
  return out;
}

Tensor sdpa_softmax(const QueryKeyBatch& qk) {
  check_qk(qk);
  const std::size_t h = qk.q.dim(0), r = qk.q.dim(1), s = qk.k.dim(1), d = qk.q.dim(2);
  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
  Tensor out({h, r, s});
  std::vector<double> row(s);
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < r; ++i) {
      const double* qi = qk.q.data() + (hh * r + i) * d;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s; ++j) {
        const double* kj = qk.k.data() + (hh * s + j) * d;
        double dot = 0.0;
        for (std::size_t x = 0; x < d; ++x) dot += qi[x] * kj[x];
        row[j] = dot * inv_sqrt_d;
        mx = std::max(mx, row[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < s; ++j) {
        row[j] = std::exp(row[j] - mx);
        denom += row[j];
      }
      for (std::size_t j = 0; j < s; ++j) out[(hh * r + i) * s + j] = row[j] / denom;
    }
  }
  return out;
}

Tensor cosine(const QueryKeyBatch& qk) {
  check_qk(qk);
  const std::size_t h = qk.q.dim(0), r = qk.q.dim(1), s = qk.k.dim(1), d = qk.q.dim(2);
  const auto q2 = sq_norms(qk.q);
  const auto k2 = sq_norms(qk.k);
  Tensor out({h, r, s});
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t i = 0; i < r; ++i) {
      const double* qi = qk.q.data() + (hh * r + i) * d;
      const double qn = std::sqrt(q2[hh * r + i]);
      for (std::size_t j = 0; j < s; ++j) {
        const double* kj = qk.k.data() + (hh * s + j) * d;
        double dot = 0.0;
        for (std::size_t x = 0; x < d; ++x) dot += qi[x] * kj[x];
        out[(hh * r + i) * s + j] = dot / (qn * std::sqrt(k2[hh * s + j]) + qk.eps0);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Entmax-1.5, exact sorted-cumulative threshold
// ---------------------------------------------------------------------------

namespace {

// Solves gamma with sum relu(z_i - gamma)^2 = 1 for z already halved/scaled.
double entmax_threshold(std::vector<double>& z) {
  std::sort(z.begin(), z.end(), std::greater<double>());
  const std::size_t d = z.size();
  double csum = 0.0, csum_sq = 0.0;
  double tau = z[0] - 1.0;
  for (std::size_t k = 1; k <= d; ++k) {
    csum += z[k - 1];
    csum_sq += z[k - 1] * z[k - 1];
    const double mean = csum / double(k);
    const double ssc = csum_sq - csum * mean;  // sum (z - mean)^2 over top-k
    const double inside = (1.0 - ssc) / double(k);
    const double cand = mean - std::sqrt(std::max(inside, 0.0));
    if (cand <= z[k - 1] && (k == d || cand >= z[k])) {
      tau = cand;
      break;
    }
  }
  return tau;
}

}  // namespace

std::vector<double> entmax15(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw ValueError("entmax15: empty input");
  if (temperature <= 0.0) throw ValueError("entmax15: temperature must be positive");
  std::vector<double> z(logits.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (!std::isfinite(logits[i])) throw ValueError("entmax15: non-finite logit");
    z[i] = logits[i] / (2.0 * temperature);
  }
  std::vector<double> sorted = z;
  const double tau = entmax_threshold(sorted);
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double u = z[i] - tau;
    p[i] = u > 0.0 ? u * u : 0.0;
  }
  return p;
}

Tensor entmax15_rows(const Tensor& logits, const Tensor& temperature) {
  if (logits.rank() < 1) throw ValueError("entmax15_rows: need at least one mode");
  const std::size_t width = logits.shape().back();
  const std::size_t rows = logits.size() / width;
  if (temperature.size() != 1 && temperature.size() != rows) {
    throw ShapeError("entmax15_rows: need one temperature, or one per row fiber");
  }
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double tau = temperature.size() == 1 ? temperature[0] : temperature[r];
    auto p = entmax15(std::span<const double>(logits.data() + r * width, width), tau);
    std::copy(p.begin(), p.end(), out.data() + r * width);
  }
  return out;
}

Tensor entmax15_rows(const Tensor& logits, double temperature) {
  return entmax15_rows(logits, Tensor::scalar(temperature));
}

// ---------------------------------------------------------------------------
// differentiable forms
// ---------------------------------------------------------------------------

ad::Var ctc(const ad::Var& q, const ad::Var& k, double eps0) {
  if (q.rank() != 3 || k.rank() != 3) {
    throw ShapeError("attn::ctc(ad): Q and K must be H x n x d_head");
  }
  const std::size_t h = q.shape()[0], r = q.shape()[1], s = k.shape()[1];
  ad::Var dots = ad::matmul(q, k, /*transpose_b=*/true);
  ad::Var q2 = ad::reshape(ad::mode_sum(ad::mul(q, q), 3), {h, r, 1});
  ad::Var k2 = ad::reshape(ad::mode_sum(ad::mul(k, k), 3), {h, 1, s});
  ad::Var denom = ad::add_scalar(ad::sub(ad::add(q2, k2), dots), eps0);
  return ad::div(dots, denom);
}

ad::Var entmax15_rows(const ad::Var& logits) {
  ad::Tape& t = *logits.tape();
  Tensor p = entmax15_rows(logits.value(), 1.0);
  const std::size_t width = p.shape().back();
  const std::size_t rows = p.size() / width;
  Tensor saved = p;
  return t.record(std::move(p), {logits}, [logits, saved, rows, width](ad::Tape& tp,
                                                                       const Tensor& g) {
    // dL/dx_j = s_j (g_j - <g, s> / sum s), s = sqrt(p) on the support.
    Tensor gx(saved.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const double* pr = saved.data() + r * width;
      const double* gr = g.data() + r * width;
      double dot = 0.0, ssum = 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        const double s = std::sqrt(pr[j]);
        dot += gr[j] * s;
        ssum += s;
      }
      const double shift = ssum > 0.0 ? dot / ssum : 0.0;
      for (std::size_t j = 0; j < width; ++j) {
        gx[r * width + j] = std::sqrt(pr[j]) * (gr[j] - shift);
      }
    }
    tp.accumulate(logits, gx);
  });
}

}  // namespace weaver::attn
