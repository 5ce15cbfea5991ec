#include "weaver/verify.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "weaver/attention.hpp"
#include "weaver/data.hpp"
#include "weaver/kron.hpp"
#include "weaver/rng.hpp"
#include "weaver/train.hpp"

namespace weaver::verify {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(lo, hi);
  return t;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

PropertyResult made(const std::string& suite, const std::string& name, bool pass,
                    std::string detail) {
  return PropertyResult{suite, name, pass, std::move(detail)};
}

// Dense oracle: apply the chained Kronecker product per feature column.
Tensor dense_chain_apply(const kron::FactorChain& chain, const Tensor& v_natural,
                         std::size_t head) {
  Tensor dense = Tensor::eye(1);
  for (std::size_t d = 1; d <= chain.order(); ++d) {
    const Tensor& f = chain.factor(d);
    const std::size_t sz = chain.size(d);
    Tensor slice({sz, sz});
    std::copy(f.data() + head * sz * sz, f.data() + (head + 1) * sz * sz, slice.data());
    dense = kron::kron_dense(dense, slice);
  }
  // v_natural is H x E x I_1 x ... x I_Delta; column e of head `head` is the
  // row-major flattening over the chain modes.
  std::size_t prod = 1;
  for (auto s : chain.sizes()) prod *= s;
  const std::size_t e_width = v_natural.size() / (chain.heads() * prod);
  Tensor out({prod, e_width});
  for (std::size_t e = 0; e < e_width; ++e) {
    const double* col = v_natural.data() + (head * e_width + e) * prod;
    for (std::size_t i = 0; i < prod; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < prod; ++j) acc += dense[i * prod + j] * col[j];
      out[i * e_width + e] = acc;
    }
  }
  return out;
}

double ctc_scalar(std::span<const double> q, std::span<const double> k, double eps0) {
  double dot = 0.0, qq = 0.0, kk = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    dot += q[i] * k[i];
    qq += q[i] * q[i];
    kk += k[i] * k[i];
  }
  return dot / (qq + kk - dot + eps0);
}

// ---------------------------------------------------------------------------
// kron suite
// ---------------------------------------------------------------------------

PropertyResult kron_oracle_equivalence(std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t p = 1 + rng.index(6), n = 1 + rng.index(6);
    const std::size_t e = 1 + rng.index(4), h = 1 + rng.index(3);
    Tensor tt = random_tensor({h, p, p}, rng);
    Tensor ts = random_tensor({h, n, n}, rng);
    kron::FactorChain chain({tt, ts});
    Tensor v = random_tensor({h, e, p, n}, rng);
    Tensor eff = kron::pkmv_efficient(chain, v);
    Tensor bas = kron::p2kmv_basic(chain, v);
    for (std::size_t hh = 0; hh < h; ++hh) {
      Tensor oracle = dense_chain_apply(chain, v, hh);
      Tensor eff_h({p * n, e});
      Tensor bas_h({p * n, e});
      std::copy(eff.data() + hh * p * n * e, eff.data() + (hh + 1) * p * n * e, eff_h.data());
      std::copy(bas.data() + hh * p * n * e, bas.data() + (hh + 1) * p * n * e, bas_h.data());
      worst = std::max(worst, max_abs_diff(eff_h, oracle));
      worst = std::max(worst, max_abs_diff(bas_h, oracle));
    }
  }
  return made("kron", "oracle_equivalence", worst <= 1e-12,
              "max abs diff vs dense Kronecker " + fmt(worst));
}

PropertyResult kron_basic_efficient_agreement(std::uint64_t seed) {
  Rng rng(seed + 1);
  double worst = 0.0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t p = 1 + rng.index(6), n = 1 + rng.index(6);
    const std::size_t e = 1 + rng.index(4), h = 1 + rng.index(3);
    kron::FactorChain chain({random_tensor({h, p, p}, rng), random_tensor({h, n, n}, rng)});
    Tensor v = random_tensor({h, e, p, n}, rng);
    worst = std::max(worst, max_abs_diff(kron::p2kmv_basic(chain, v),
                                         kron::pkmv_efficient(chain, v)));
  }
  return made("kron", "basic_efficient_agreement", worst <= 1e-12,
              "max abs diff over 100 configs " + fmt(worst));
}

PropertyResult kron_delta3_oracle(std::uint64_t seed) {
  Rng rng(seed + 2);
  double worst = 0.0;
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t i1 = 1 + rng.index(3), i2 = 1 + rng.index(3), i3 = 1 + rng.index(3);
    const std::size_t e = 1 + rng.index(3), h = 1 + rng.index(2);
    kron::FactorChain chain({random_tensor({h, i1, i1}, rng), random_tensor({h, i2, i2}, rng),
                             random_tensor({h, i3, i3}, rng)});
    Tensor v = random_tensor({h, e, i1, i2, i3}, rng);
    Tensor eff = kron::pkmv_efficient(chain, v);
    const std::size_t prod = i1 * i2 * i3;
    for (std::size_t hh = 0; hh < h; ++hh) {
      Tensor oracle = dense_chain_apply(chain, v, hh);
      Tensor eff_h({prod, e});
      std::copy(eff.data() + hh * prod * e, eff.data() + (hh + 1) * prod * e, eff_h.data());
      worst = std::max(worst, max_abs_diff(eff_h, oracle));
    }
  }
  return made("kron", "delta3_oracle", worst <= 1e-12,
              "max abs diff vs chained dense Kronecker " + fmt(worst));
}

PropertyResult kron_linearity(std::uint64_t seed) {
  Rng rng(seed + 3);
  double worst = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t p = 2 + rng.index(4), n = 2 + rng.index(4), e = 1 + rng.index(3);
    Tensor tt = random_tensor({1, p, p}, rng);
    Tensor ts = random_tensor({1, n, n}, rng);
    kron::FactorChain chain({tt, ts});
    Tensor v1 = random_tensor({1, e, p, n}, rng);
    Tensor v2 = random_tensor({1, e, p, n}, rng);
    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    // Linear in the operand.
    Tensor combo = ew_add(ew_scale(v1, a), ew_scale(v2, b));
    Tensor lhs = kron::pkmv_efficient(chain, combo);
    Tensor rhs = ew_add(ew_scale(kron::pkmv_efficient(chain, v1), a),
                        ew_scale(kron::pkmv_efficient(chain, v2), b));
    worst = std::max(worst, max_abs_diff(lhs, rhs));
    // Linear in each factor.
    Tensor ts2 = random_tensor({1, n, n}, rng);
    kron::FactorChain mixed({tt, ew_add(ew_scale(ts, a), ew_scale(ts2, b))});
    kron::FactorChain c1({tt, ts});
    kron::FactorChain c2({tt, ts2});
    Tensor lhs2 = kron::pkmv_efficient(mixed, v1);
    Tensor rhs2 = ew_add(ew_scale(kron::pkmv_efficient(c1, v1), a),
                         ew_scale(kron::pkmv_efficient(c2, v1), b));
    worst = std::max(worst, max_abs_diff(lhs2, rhs2));
  }
  return made("kron", "linearity", worst <= 1e-11, "superposition residual " + fmt(worst));
}

PropertyResult kron_tumble_bijection(std::uint64_t seed) {
  Rng rng(seed + 4);
  bool ok = true;
  for (int rep = 0; rep < 20 && ok; ++rep) {
    const std::size_t i1 = 1 + rng.index(4), i2 = 1 + rng.index(4), i3 = 1 + rng.index(4);
    const std::size_t e = 1 + rng.index(3);
    Tensor v = random_tensor({1, e, i1, i2, i3}, rng);
    kron::KmvOperand op = kron::fold_operand(v, {i1, i2, i3}, 1);
    std::vector<double> before(v.values().begin(), v.values().end());
    std::sort(before.begin(), before.end());
    while (op.depth > 0) {
      op = kron::kron_tumble(op);
      std::vector<double> now(op.value.values().begin(), op.value.values().end());
      std::sort(now.begin(), now.end());
      if (now != before) {
        ok = false;
        break;
      }
    }
  }
  return made("kron", "tumble_bijection", ok, "scalar multiset preserved across depths");
}

PropertyResult kron_wikps_equivalence(std::uint64_t seed) {
  Rng rng(seed + 5);
  double worst = 0.0;
  for (std::size_t h : {std::size_t(1), std::size_t(2), std::size_t(4)}) {
    const std::size_t p = 3, n = 2, e = 3;
    Tensor tt = random_tensor({h, p, p}, rng);
    Tensor ts = random_tensor({h, n, n}, rng);
    kron::FactorChain chain({tt, ts});
    Tensor v = random_tensor({h, e, p, n}, rng);
    std::vector<Tensor> head_w;
    for (std::size_t hh = 0; hh < h; ++hh) {
      head_w.push_back(random_tensor({e, h * e}, rng));
    }
    // Explicit per-head weighted Kronecker product summation.
    Tensor explicit_sum({p * n, h * e});
    for (std::size_t hh = 0; hh < h; ++hh) {
      Tensor z_h = dense_chain_apply(chain, v, hh);  // PN x E
      Tensor term = matmul_last(z_h, head_w[hh]);    // PN x HE
      explicit_sum = ew_add(explicit_sum, term);
    }
    // Head-mixing-matrix form on the concatenated outputs.
    Tensor z = kron::pkmv_efficient(chain, v);  // H x PN x E
    Tensor z_cat = rearrange(z, "h m e -> m (h e)");
    Tensor w_o = kron::wikps_expand(head_w);
    Tensor mixed = matmul_last(z_cat, w_o);
    worst = std::max(worst, max_abs_diff(explicit_sum, mixed));
  }
  return made("kron", "wikps_equivalence", worst <= 1e-12,
              "explicit KPS vs head-mixing matrix, max abs diff " + fmt(worst));
}

PropertyResult kron_graph_pattern(std::uint64_t seed) {
  Rng rng(seed + 6);
  bool ok = true;
  std::string detail = "edge pattern equals kron_dense nonzeros on 200 pairs";
  for (int rep = 0; rep < 200 && ok; ++rep) {
    const std::size_t p = 1 + rng.index(6), n = 1 + rng.index(6);
    Tensor at({p, p});
    Tensor as({n, n});
    for (auto& x : at.values()) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
    for (auto& x : as.values()) x = rng.uniform() < 0.5 ? 1.0 : 0.0;
    kron::KronGraphEdges edges(at, as);
    Tensor dense = kron::kron_dense(at, as);
    Tensor pattern(dense.shape());
    for (std::size_t i = 0; i < dense.size(); ++i) pattern[i] = dense[i] != 0.0 ? 1.0 : 0.0;
    if (max_abs_diff(edges.dense(), pattern) != 0.0) {
      ok = false;
      detail = "mismatch at sizes P=" + std::to_string(p) + " N=" + std::to_string(n);
    }
  }
  return made("kron", "graph_product_pattern", ok, detail);
}

// ---------------------------------------------------------------------------
// attention suite
// ---------------------------------------------------------------------------

PropertyResult attention_ctc_range(std::uint64_t seed) {
  Rng rng(seed + 10);
  double lo = 1e9, hi = -1e9;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 1 + rng.index(16);
    attn::QueryKeyBatch qk{random_tensor({1, 10, d}, rng, -3.0, 3.0),
                           random_tensor({1, 10, d}, rng, -3.0, 3.0), 1e-6};
    Tensor th = attn::ctc(qk);
    for (double x : th.values()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const bool ok = lo >= -1.0 / 3.0 - 1e-9 && hi <= 1.0 + 1e-9;
  return made("attention", "ctc_range", ok,
              "observed range [" + fmt(lo) + ", " + fmt(hi) + "]");
}

PropertyResult attention_ctc_stationarity(std::uint64_t seed) {
  Rng rng(seed + 11);
  const double eps0 = 0.0;  // analytic stationarity holds for the raw kernel
  bool ok = true;
  std::string detail;
  for (int rep = 0; rep < 5 && ok; ++rep) {
    const std::size_t d = 2 + rng.index(4);
    std::vector<double> k(d);
    for (auto& x : k) x = rng.uniform(-1.0, 1.0) + (x == 0.0 ? 0.1 : 0.0);
    double knorm = 0.0;
    for (double x : k) knorm += x * x;
    if (knorm < 1e-3) continue;
    const double h = 1e-5;
    for (double sign : {1.0, -1.0}) {
      std::vector<double> q(d);
      for (std::size_t i = 0; i < d; ++i) q[i] = sign * k[i];
      const double val = ctc_scalar(q, k, 1e-12);
      const double want = sign > 0 ? 1.0 : -1.0 / 3.0;
      if (std::abs(val - want) > 1e-6) {
        ok = false;
        detail = "value at q=" + std::string(sign > 0 ? "k" : "-k") + " is " + fmt(val);
        break;
      }
      // Numerical gradient.
      double gmax = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        std::vector<double> qp = q, qm = q;
        qp[i] += h;
        qm[i] -= h;
        gmax = std::max(gmax, std::abs((ctc_scalar(qp, k, eps0 + 1e-12) -
                                        ctc_scalar(qm, k, eps0 + 1e-12)) /
                                       (2 * h)));
      }
      if (gmax > 1e-6) {
        ok = false;
        detail = "gradient " + fmt(gmax) + " at q=" + (sign > 0 ? "k" : "-k");
        break;
      }
      // Numerical Hessian definiteness.
      Eigen::MatrixXd hess(d, d);
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          std::vector<double> qpp = q, qpm = q, qmp = q, qmm = q;
          qpp[i] += h; qpp[j] += h;
          qpm[i] += h; qpm[j] -= h;
          qmp[i] -= h; qmp[j] += h;
          qmm[i] -= h; qmm[j] -= h;
          hess(long(i), long(j)) = (ctc_scalar(qpp, k, 1e-12) - ctc_scalar(qpm, k, 1e-12) -
                                    ctc_scalar(qmp, k, 1e-12) + ctc_scalar(qmm, k, 1e-12)) /
                                   (4 * h * h);
        }
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (hess + hess.transpose()));
      const double emin = eig.eigenvalues().minCoeff();
      const double emax = eig.eigenvalues().maxCoeff();
      const bool neg_def = emax < -1e-4;  // local maximum at q = k
      const bool pos_def = emin > 1e-4;   // local minimum at q = -k
      if ((sign > 0 && !neg_def) || (sign < 0 && !pos_def)) {
        ok = false;
        detail = "hessian eigenvalues [" + fmt(emin) + ", " + fmt(emax) + "] at q=" +
                 (sign > 0 ? "k" : "-k");
        break;
      }
    }
  }
  if (ok) detail = "values, gradients and hessian signs match at q = +-k";
  return made("attention", "ctc_stationary_points", ok, detail);
}

PropertyResult attention_positive_dominance(std::uint64_t seed) {
  Rng rng(seed + 12);
  const std::size_t n = 64, trials = 20000;
  const double z = 1.0;  // constant feature; sum z = n
  bool ok = true;
  std::string detail;
  double mean_low = 0.0, mean_high = 0.0;
  for (double p : {0.2, 0.25, 0.5}) {
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double theta = rng.uniform() < p ? 1.0 : 0.0;
        m += (4.0 / 3.0 * theta - 1.0 / 3.0) * z;
      }
      sum += m;
      sum_sq += m * m;
    }
    const double mean = sum / double(trials);
    const double var = sum_sq / double(trials) - mean * mean;
    const double se = std::sqrt(var / double(trials));
    const double expected = (4.0 * p - 1.0) / 3.0 * double(n) * z;
    if (std::abs(mean - expected) > 3.0 * se + 1e-12) {
      ok = false;
      detail = "p=" + fmt(p) + ": mean " + fmt(mean) + " vs expected " + fmt(expected) +
               " (3 SE " + fmt(3 * se) + ")";
    }
    if (p == 0.2) mean_low = mean;
    if (p == 0.5) mean_high = mean;
  }
  if (ok && !(mean_low < 0.0 && mean_high > 0.0)) {
    ok = false;
    detail = "no sign flip across p = 0.25";
  }
  if (ok) detail = "E[M] matches (4p-1)/3 sum z within 3 SE; sign flips at p=0.25";
  return made("attention", "positive_dominance", ok, detail);
}

PropertyResult attention_entmax_invariants(std::uint64_t seed) {
  Rng rng(seed + 13);
  bool ok = true;
  std::string detail = "simplex, order preservation, ties and temperature monotonicity";
  for (int rep = 0; rep < 200 && ok; ++rep) {
    const std::size_t d = 2 + rng.index(31);
    std::vector<double> logits(d);
    for (auto& x : logits) x = rng.uniform(-4.0, 4.0);
    auto p = attn::entmax15(logits, 1.0);
    double sum = 0.0;
    for (double x : p) sum += x;
    if (std::abs(sum - 1.0) > 1e-12) {
      ok = false;
      detail = "simplex violation " + fmt(std::abs(sum - 1.0));
      break;
    }
    for (std::size_t i = 0; i < d && ok; ++i) {
      if (p[i] < 0.0) {
        ok = false;
        detail = "negative probability";
      }
      for (std::size_t j = 0; j < d; ++j) {
        if (logits[i] > logits[j] && p[i] < p[j] - 1e-12) {
          ok = false;
          detail = "order not preserved";
          break;
        }
      }
    }
    // Doubling the temperature never shrinks the support.
    auto p2 = attn::entmax15(logits, 2.0);
    std::size_t s1 = 0, s2 = 0;
    for (double x : p) s1 += x > 0.0;
    for (double x : p2) s2 += x > 0.0;
    if (s2 < s1) {
      ok = false;
      detail = "support shrank when temperature doubled";
    }
  }
  if (ok) {
    auto u = attn::entmax15(std::vector<double>{1.0, 1.0, 1.0, 1.0}, 1.0);
    for (double x : u) {
      if (x != 0.25) {
        ok = false;
        detail = "uniform logits did not yield exact 0.25";
      }
    }
  }
  return made("attention", "entmax_invariants", ok, detail);
}

PropertyResult attention_softmax_rows(std::uint64_t seed) {
  Rng rng(seed + 14);
  bool ok = true;
  std::string detail = "rows sum to 1; jacobian matches alpha (delta - alpha)";
  for (int rep = 0; rep < 20 && ok; ++rep) {
    const std::size_t d = 2 + rng.index(6), s = 2 + rng.index(6);
    attn::QueryKeyBatch qk{random_tensor({1, 3, d}, rng), random_tensor({1, s, d}, rng), 1e-6};
    Tensor th = attn::sdpa_softmax(qk);
    for (std::size_t i = 0; i < 3; ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < s; ++j) sum += th[i * s + j];
      if (std::abs(sum - 1.0) > 1e-12) {
        ok = false;
        detail = "row sum off by " + fmt(std::abs(sum - 1.0));
      }
    }
    // Jacobian structure by finite differences on the logits of one row.
    std::vector<double> logits(s);
    for (auto& x : logits) x = rng.uniform(-2.0, 2.0);
    auto soft = [&](const std::vector<double>& z) {
      std::vector<double> out(z.size());
      double mx = *std::max_element(z.begin(), z.end()), den = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) den += std::exp(z[j] - mx);
      for (std::size_t j = 0; j < z.size(); ++j) out[j] = std::exp(z[j] - mx) / den;
      return out;
    };
    auto alpha = soft(logits);
    const double h = 1e-6;
    for (std::size_t a = 0; a < s && ok; ++a) {
      for (std::size_t b = 0; b < s; ++b) {
        auto zp = logits, zm = logits;
        zp[b] += h;
        zm[b] -= h;
        const double fd = (soft(zp)[a] - soft(zm)[a]) / (2 * h);
        const double want = alpha[a] * ((a == b ? 1.0 : 0.0) - alpha[b]);
        if (std::abs(fd - want) > 1e-6) {
          ok = false;
          detail = "jacobian mismatch " + fmt(std::abs(fd - want));
          break;
        }
      }
    }
  }
  return made("attention", "softmax_rows_and_jacobian", ok, detail);
}

// ---------------------------------------------------------------------------
// dictionary suite
// ---------------------------------------------------------------------------

PropertyResult dictionary_convex_hull(std::uint64_t seed) {
  Rng rng(seed + 20);
  const std::size_t p = 4, n = 5, c = 1, m = 6, k = 3;
  auto dict = phase::PhaseDictionary::init(p, n, c, m, k, 0.1, rng);
  Tensor x = random_tensor({p, n, c}, rng);
  Tensor weights = phase::retrieval_weights(x, dict);
  bool ok = true;
  std::string detail = "weights on simplex; cofactors reconstruct from landmarks";
  for (std::size_t r = 0; r < n && ok; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double w = weights[r * m + j];
      if (w < 0.0) {
        ok = false;
        detail = "negative retrieval weight";
      }
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      ok = false;
      detail = "weights sum off by " + fmt(std::abs(sum - 1.0));
    }
  }
  if (ok) {
    Tensor xi = phase::retrieve_cofactors(x, dict);
    Tensor recon = matmul_last(weights, dict.landmarks);   // N x PK
    Tensor expect = rearrange(recon, "n (p k) -> p n k", {{"p", p}});
    const double diff = max_abs_diff(xi, expect);
    if (diff > 1e-12) {
      ok = false;
      detail = "reconstruction differs by " + fmt(diff);
    }
  }
  return made("dictionary", "convex_hull", ok, detail);
}

PropertyResult dictionary_gradient_flow(std::uint64_t seed) {
  Rng rng(seed + 21);
  const std::size_t p = 3, n = 4, c = 1, m = 5, k = 2;
  auto dict = phase::PhaseDictionary::init(p, n, c, m, k, 0.1, rng);
  Tensor x = random_tensor({p, n, c}, rng);
  ad::Tape tape;
  phase::PhaseDictionaryVars vars{tape.variable(dict.landmarks), tape.variable(dict.query_w),
                                  tape.variable(dict.query_b), tape.variable(dict.tau)};
  Rng drop(0);
  ad::Var xi = phase::retrieve_cofactors(tape.constant(x), vars, dict, false, drop);
  // A generic scalar head so every cofactor entry contributes.
  Tensor weights = random_tensor({p, n, k}, rng);
  ad::Var loss = ad::sum_all(ad::mul(xi, tape.constant(weights)));
  tape.backward(loss);
  auto norm = [&](const ad::Var& v) {
    double s = 0.0;
    for (double g : tape.grad(v).values()) s += g * g;
    return std::sqrt(s);
  };
  const double gl = norm(vars.landmarks), gw = norm(vars.query_w), gt = norm(vars.tau);
  const bool ok = gl > 0.0 && gw > 0.0 && gt > 0.0;
  return made("dictionary", "gradient_flow", ok,
              "grad norms: landmarks " + fmt(gl) + ", projector " + fmt(gw) + ", tau " +
                  fmt(gt));
}

PropertyResult dictionary_eval_deterministic(std::uint64_t seed) {
  Rng rng(seed + 22);
  const std::size_t p = 3, n = 4, c = 1;
  auto dict = phase::PhaseDictionary::init(p, n, c, 5, 2, 0.5, rng);
  Tensor x = random_tensor({p, n, c}, rng);
  Rng r1(7), r2(99);
  Tensor a = phase::retrieve_cofactors(x, dict, false, r1);
  Tensor b = phase::retrieve_cofactors(x, dict, false, r2);
  const double diff = max_abs_diff(a, b);
  return made("dictionary", "eval_deterministic", diff == 0.0,
              "eval-mode retrievals bit-identical (diff " + fmt(diff) + ")");
}

PropertyResult dictionary_temperature_support(std::uint64_t seed) {
  Rng rng(seed + 23);
  bool ok = true;
  std::string detail = "support never shrinks as the node temperature grows";
  for (int rep = 0; rep < 50 && ok; ++rep) {
    const std::size_t m = 4 + rng.index(12);
    std::vector<double> logits(m);
    for (auto& x : logits) x = rng.uniform(-2.0, 2.0);
    std::size_t prev_support = 0;
    for (double tau : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      auto p = attn::entmax15(logits, tau);
      std::size_t support = 0;
      for (double x : p) support += x > 0.0;
      if (support < prev_support) {
        ok = false;
        detail = "support shrank from " + std::to_string(prev_support) + " to " +
                 std::to_string(support);
        break;
      }
      prev_support = support;
    }
  }
  return made("dictionary", "temperature_support", ok, detail);
}

// ---------------------------------------------------------------------------
// model suite
// ---------------------------------------------------------------------------

model::WeaverConfig desk_config_impl(bool use_time) {
  model::WeaverConfig cfg;
  cfg.history = 4;
  cfg.horizon = 4;
  cfg.nodes = 6;
  cfg.channels = 1;
  cfg.embed = 8;
  cfg.heads = 2;
  cfg.dict_landmarks = 4;
  cfg.dict_width = 2;
  cfg.scorers_spatial = 2;
  cfg.scorers_temporal = 2;
  cfg.rho_spatial = 0.6;
  cfg.rho_temporal = 0.6;
  cfg.kern_width = 3;
  cfg.spatial_widths = {8};
  cfg.dropout = 0.1;
  cfg.mlp_expansion = 2;
  cfg.leaky_slope = 0.01;
  cfg.use_time_metadata = use_time;
  return cfg;
}

Tensor desk_time_features(std::size_t p) {
  std::vector<double> minutes, dows;
  for (std::size_t i = 0; i < p; ++i) {
    minutes.push_back(double(420 + 5 * i));
    dows.push_back(3.0);
  }
  return model::cyclical_encoding(minutes, dows);
}

PropertyResult model_theta_range(std::uint64_t seed) {
  Rng rng(seed + 30);
  auto cfg = desk_config_impl(true);
  auto params = model::WeaverParameters::init(cfg, rng);
  double lo = 1e9, hi = -1e9;
  for (int rep = 0; rep < 10; ++rep) {
    Tensor g = random_tensor({cfg.nodes, cfg.embed}, rng, -2.0, 2.0);
    ad::Tape tape;
    auto pv = model::lease(tape, params, false);
    Tensor th = model::local_attention(tape.constant(g), model::Axis::Spatial, pv, cfg).value();
    for (double x : th.values()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  const bool ok = lo >= -1.0 / 3 - 1e-9 && hi <= 1.0 + 1e-9;
  return made("model", "valence_range", ok, "theta range [" + fmt(lo) + ", " + fmt(hi) + "]");
}

PropertyResult model_st_layer_dense_oracle(std::uint64_t seed) {
  Rng rng(seed + 31);
  auto cfg = desk_config_impl(true);
  auto params = model::WeaverParameters::init(cfg, rng);
  const std::size_t p = cfg.history, n = cfg.nodes, e = cfg.embed, h = cfg.heads;
  const std::size_t dh = cfg.head_dim();
  Tensor u = random_tensor({e, p, n}, rng);
  Tensor theta_s = random_tensor({h, n, n}, rng);
  Tensor theta_t = random_tensor({h, p, p}, rng);

  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  Rng drop(0);
  Tensor out = model::st_kronecker_layer(tape.constant(u), tape.constant(theta_s),
                                         tape.constant(theta_t), pv, cfg, false, drop)
                   .value();

  // Dense route: per head, (Theta_T kron Theta_S) applied to each head-dim
  // column of the flattened features, then the same consolidation.
  Tensor z_cat({p * n, e});
  for (std::size_t hh = 0; hh < h; ++hh) {
    Tensor tth({p, p});
    Tensor tsh({n, n});
    std::copy(theta_t.data() + hh * p * p, theta_t.data() + (hh + 1) * p * p, tth.data());
    std::copy(theta_s.data() + hh * n * n, theta_s.data() + (hh + 1) * n * n, tsh.data());
    Tensor dense = kron::kron_dense(tth, tsh);
    for (std::size_t d = 0; d < dh; ++d) {
      std::vector<double> col(p * n);
      for (std::size_t t = 0; t < p; ++t) {
        for (std::size_t s = 0; s < n; ++s) {
          col[t * n + s] = u[((hh * dh + d) * p + t) * n + s];
        }
      }
      Tensor msg = matmul_last(dense, Tensor({p * n, 1}, col));
      for (std::size_t i = 0; i < p * n; ++i) z_cat[i * e + hh * dh + d] = msg[i];
    }
  }
  Tensor mixed = matmul_last(z_cat, params.headmix_w);  // PN x 2E
  Tensor expect({p, n, e});
  for (std::size_t t = 0; t < p; ++t) {
    for (std::size_t s = 0; s < n; ++s) {
      for (std::size_t j = 0; j < e; ++j) {
        const double sig = mixed[(t * n + s) * 2 * e + j];
        const double gate = mixed[(t * n + s) * 2 * e + e + j];
        expect[(t * n + s) * e + j] =
            sig / (1.0 + std::exp(-gate)) + u[(j * p + t) * n + s];
      }
    }
  }
  const double diff = max_abs_diff(out, expect);
  return made("model", "st_layer_dense_oracle", diff <= 1e-10,
              "layer vs dense Kronecker message passing, diff " + fmt(diff));
}

PropertyResult model_residual_identity(std::uint64_t seed) {
  Rng rng(seed + 32);
  auto cfg = desk_config_impl(true);
  auto params = model::WeaverParameters::init(cfg, rng);
  for (auto& [name, t] : params.entries()) {
    if (name != "head.readout_b") {
      for (auto& x : t->values()) x = 0.0;
    }
  }
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor y = model::weaver_forward(x, desk_time_features(cfg.history), params, cfg);
  double diff = 0.0;
  for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
    for (std::size_t q = 0; q < cfg.horizon; ++q) {
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        diff = std::max(diff, std::abs(y[(q * cfg.nodes + nn) * cfg.channels + c] -
                                       params.readout_b[q * cfg.channels + c]));
      }
    }
  }
  return made("model", "residual_identity", diff == 0.0,
              "zero weights degrade to the readout bias (diff " + fmt(diff) + ")");
}

PropertyResult model_head_permutation(std::uint64_t seed) {
  Rng rng(seed + 33);
  auto cfg = desk_config_impl(true);
  auto params = model::WeaverParameters::init(cfg, rng);
  const std::size_t p = cfg.history, n = cfg.nodes, e = cfg.embed, h = cfg.heads;
  const std::size_t dh = cfg.head_dim();
  Tensor u = random_tensor({e, p, n}, rng);
  Tensor theta_s = random_tensor({h, n, n}, rng);
  Tensor theta_t = random_tensor({h, p, p}, rng);
  std::vector<std::size_t> perm(h);
  for (std::size_t i = 0; i < h; ++i) perm[i] = (i + 1) % h;

  auto run_msg = [&](const Tensor& uu, const Tensor& ts, const Tensor& tt,
                     const model::WeaverParameters& pp) {
    ad::Tape tape;
    auto pv = model::lease(tape, pp, false);
    Rng drop(0);
    Tensor out = model::st_kronecker_layer(tape.constant(uu), tape.constant(ts),
                                           tape.constant(tt), pv, cfg, false, drop)
                     .value();
    // Remove the residual so the message-passing part is compared.
    Tensor res = rearrange(uu, "e p n -> p n e");
    return ew_sub(out, res);
  };

  Tensor base = run_msg(u, theta_s, theta_t, params);

  // Permute head blocks of the features, the factor slices, and the mixing
  // weight row blocks together.
  Tensor u2(u.shape());
  Tensor ts2(theta_s.shape());
  Tensor tt2(theta_t.shape());
  model::WeaverParameters params2 = params;
  for (std::size_t i = 0; i < h; ++i) {
    const std::size_t src = perm[i];
    for (std::size_t d = 0; d < dh; ++d) {
      std::copy(u.data() + (src * dh + d) * p * n, u.data() + (src * dh + d + 1) * p * n,
                u2.data() + (i * dh + d) * p * n);
      std::copy(params.headmix_w.data() + (src * dh + d) * 2 * e,
                params.headmix_w.data() + (src * dh + d + 1) * 2 * e,
                params2.headmix_w.data() + (i * dh + d) * 2 * e);
    }
    std::copy(theta_s.data() + src * n * n, theta_s.data() + (src + 1) * n * n,
              ts2.data() + i * n * n);
    std::copy(theta_t.data() + src * p * p, theta_t.data() + (src + 1) * p * p,
              tt2.data() + i * p * p);
  }
  Tensor permuted = run_msg(u2, ts2, tt2, params2);
  const double diff = max_abs_diff(base, permuted);
  return made("model", "head_permutation", diff <= 1e-12,
              "message passing invariant under joint head permutation, diff " + fmt(diff));
}

PropertyResult model_eval_deterministic(std::uint64_t seed) {
  Rng rng(seed + 34);
  auto cfg = desk_config_impl(true);
  auto params = model::WeaverParameters::init(cfg, rng);
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor bd = desk_time_features(cfg.history);
  Tensor a = model::weaver_forward(x, bd, params, cfg);
  Tensor b = model::weaver_forward(x, bd, params, cfg);
  const bool shape_ok = a.shape() == Shape{cfg.horizon, cfg.nodes, cfg.channels};
  const double diff = max_abs_diff(a, b);
  return made("model", "eval_deterministic", shape_ok && diff == 0.0,
              "Q x N x C output, repeat runs bit-identical (diff " + fmt(diff) + ")");
}

PropertyResult model_gradient_property(std::uint64_t seed) {
  auto res_t = model_gradient_check(desk_config_impl(true), seed + 35);
  auto res_nt = model_gradient_check(desk_config_impl(false), seed + 36);
  const bool ok = res_t.pass && res_nt.pass;
  return made("model", "gradient_check", ok,
              "T worst " + fmt(res_t.max_rel_err) + " (" + res_t.worst_param + "), NT worst " +
                  fmt(res_nt.max_rel_err) + " (" + res_nt.worst_param + ")");
}

// ---------------------------------------------------------------------------
// data suite
// ---------------------------------------------------------------------------

PropertyResult data_scaler(std::uint64_t seed) {
  data::TrafficSeries s;
  s.values = Tensor({3, 1, 1}, {1.0, 2.0, 3.0});
  s.mask = Tensor({3, 1, 1}, {1.0, 0.0, 1.0});
  s.timestamps = {{0, 1}, {5, 1}, {10, 1}};
  s.channel_names = {"speed"};
  auto stats = data::fit_scaler(s);
  bool ok = stats.mean[0] == 2.0 && stats.stddev[0] == 1.0;
  std::string detail = "masked mean 2, biased std 1";
  if (ok) {
    // Leakage guard: mutating later values does not alter training stats.
    data::TrafficSeries big;
    Rng rng(seed + 40);
    big.values = random_tensor({40, 2, 1}, rng, 10.0, 60.0);
    big.mask = Tensor::full({40, 2, 1}, 1.0);
    big.timestamps.resize(40);
    for (int i = 0; i < 40; ++i) big.timestamps[std::size_t(i)] = {i * 5 % 1440, 1};
    auto ds1 = data::split_and_slice(big, 2, 2, 0.5, 0.2);
    for (std::size_t i = 20 * 2; i < big.values.size(); ++i) big.values[i] += 100.0;
    auto ds2 = data::split_and_slice(big, 2, 2, 0.5, 0.2);
    if (ds1.stats.mean != ds2.stats.mean || ds1.stats.stddev != ds2.stats.stddev) {
      ok = false;
      detail = "validation/test mutation leaked into training statistics";
    }
  }
  return made("data", "scaler_and_leakage_guard", ok, detail);
}

PropertyResult data_roundtrip(std::uint64_t seed) {
  Rng rng(seed + 41);
  Tensor x = random_tensor({30, 3, 1}, rng, 20.0, 70.0);
  Tensor mask = Tensor::full({30, 3, 1}, 1.0);
  for (auto& m : mask.values()) m = rng.uniform() < 0.9 ? 1.0 : 0.0;
  data::TrafficSeries s;
  s.values = x;
  s.mask = mask;
  s.timestamps.resize(30);
  for (int i = 0; i < 30; ++i) s.timestamps[std::size_t(i)] = {i * 5 % 1440, 1};
  auto stats = data::fit_scaler(s);
  Tensor std_x = data::standardize(x, mask, stats);
  Tensor back = data::invert(std_x, stats);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask[i] != 0.0) {
      worst = std::max(worst, std::abs(back[i] - x[i]) / std::max(1.0, std::abs(x[i])));
    }
  }
  return made("data", "standardize_roundtrip", worst <= 1e-6,
              "observed-entry round trip error " + fmt(worst));
}

PropertyResult data_metrics(std::uint64_t seed) {
  (void)seed;
  data::Metrics m(1);
  m.add(Tensor({1, 2, 1}, {10.0, 20.0}), Tensor({1, 2, 1}, {12.0, 18.0}),
        Tensor::full({1, 2, 1}, 1.0));
  auto row = m.all();
  bool ok = std::abs(row.mae - 2.0) <= 1e-12 && std::abs(row.rmse - 2.0) <= 1e-12 &&
            std::abs(row.mape_pct - 15.0) <= 1e-12;
  std::string detail = "hand example MAE 2, RMSE 2, MAPE 15%";
  if (ok) {
    Rng rng(seed + 42);
    data::Metrics r(3);
    for (int rep = 0; rep < 5; ++rep) {
      Tensor y = random_tensor({3, 4, 1}, rng, 10.0, 60.0);
      Tensor yh = random_tensor({3, 4, 1}, rng, 10.0, 60.0);
      r.add(y, yh, Tensor::full({3, 4, 1}, 1.0));
    }
    auto all = r.all();
    if (all.rmse < all.mae) {
      ok = false;
      detail = "RMSE fell below MAE";
    }
  }
  return made("data", "metrics", ok, detail);
}

PropertyResult data_window_alignment(std::uint64_t seed) {
  Rng rng(seed + 43);
  data::SynthSpec spec;
  spec.nodes = 3;
  spec.days = 2;
  spec.seed = seed;
  auto series = data::synth_series(spec);
  auto ds = data::split_and_slice(series, 4, 4, 0.7, 0.1);
  bool ok = true;
  std::string detail = "window Y starts one stride after X ends; counts match S-P-Q+1";
  const std::size_t s_train = std::size_t(std::floor(0.7 * double(series.steps())));
  if (ds.train.window_count() != s_train - 8 + 1) {
    ok = false;
    detail = "train window count mismatch";
  }
  for (int rep = 0; rep < 10 && ok; ++rep) {
    const std::size_t i = rng.index(ds.train.window_count());
    auto w = ds.train.window(i);
    const int x_last = w.x_time.back().minute_of_day;
    const int y_first = w.y_time.front().minute_of_day;
    const int step = series.cadence_minutes;
    if ((x_last + step) % 1440 != y_first) {
      ok = false;
      detail = "window timestamps misaligned";
    }
  }
  return made("data", "window_alignment", ok, detail);
}

PropertyResult data_synth(std::uint64_t seed) {
  data::SynthSpec spec;
  spec.nodes = 6;
  spec.days = 7;
  spec.missing_rate = 0.1;
  spec.seed = seed + 44;
  auto a = data::synth_series(spec);
  auto b = data::synth_series(spec);
  bool ok = max_abs_diff(a.values, b.values) == 0.0 && max_abs_diff(a.mask, b.mask) == 0.0;
  std::string detail = "deterministic per seed";
  if (ok) {
    double density = 0.0;
    for (double m : a.mask.values()) density += m;
    density /= double(a.mask.size());
    if (std::abs(density - 0.9) > 0.02) {
      ok = false;
      detail = "mask density " + fmt(density) + " outside 0.9 +- 0.02";
    }
  }
  return made("data", "synth_determinism_and_missingness", ok, detail);
}

}  // namespace

model::WeaverConfig desk_config(bool use_time_metadata) {
  return desk_config_impl(use_time_metadata);
}

GradCheckResult model_gradient_check(const model::WeaverConfig& cfg, std::uint64_t seed,
                                     double fd_step, double tol) {
  Rng rng(seed);
  model::WeaverParameters params = model::WeaverParameters::init(cfg, rng);
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor y = random_tensor({cfg.horizon, cfg.nodes, cfg.channels}, rng);
  std::optional<Tensor> bd;
  if (cfg.use_time_metadata) bd = desk_time_features(cfg.history);

  // Deterministic training-mode forward: the dropout stream restarts at the
  // same seed for every evaluation, so finite differences see a fixed mask.
  auto loss_at = [&](const model::WeaverParameters& pp) {
    ad::Tape tape;
    auto pv = model::lease(tape, pp, false);
    Rng drop(seed + 1);
    ad::Var out = model::weaver_forward(tape, x, bd, pv, cfg, true, drop);
    return model::mae_loss(out, y).value().item();
  };

  // Reverse accumulation.
  ad::Tape tape;
  auto pv = model::lease(tape, params, true);
  Rng drop(seed + 1);
  ad::Var out = model::weaver_forward(tape, x, bd, pv, cfg, true, drop);
  ad::Var loss = model::mae_loss(out, y);
  tape.backward(loss);

  GradCheckResult res;
  res.pass = true;
  res.parameter_scalars = params.scalar_count();
  auto entries = params.entries();
  for (std::size_t pi = 0; pi < entries.size(); ++pi) {
    const std::string& name = entries[pi].first;
    Tensor* tensor = entries[pi].second;
    const Tensor& g_ad = tape.grad(pv.named[pi].second);
    Tensor g_fd(tensor->shape());
    for (std::size_t j = 0; j < tensor->size(); ++j) {
      const double keep = (*tensor)[j];
      (*tensor)[j] = keep + fd_step;
      const double up = loss_at(params);
      (*tensor)[j] = keep - fd_step;
      const double dn = loss_at(params);
      (*tensor)[j] = keep;
      g_fd[j] = (up - dn) / (2.0 * fd_step);
    }
    double na = 0.0, nf = 0.0, nd = 0.0;
    for (std::size_t j = 0; j < g_fd.size(); ++j) {
      na += g_ad[j] * g_ad[j];
      nf += g_fd[j] * g_fd[j];
      const double d = g_ad[j] - g_fd[j];
      nd += d * d;
    }
    const double rel = std::sqrt(nd) / std::max({std::sqrt(na), std::sqrt(nf), 1e-8});
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_param = name;
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

const std::vector<Property>& properties() {
  static const std::vector<Property> props = [] {
    std::vector<Property> v;
    auto add = [&](const std::string& suite, const std::string& name,
                   PropertyResult (*fn)(std::uint64_t)) {
      v.push_back(Property{suite, name, fn});
    };
    add("kron", "oracle_equivalence", kron_oracle_equivalence);
    add("kron", "basic_efficient_agreement", kron_basic_efficient_agreement);
    add("kron", "delta3_oracle", kron_delta3_oracle);
    add("kron", "linearity", kron_linearity);
    add("kron", "tumble_bijection", kron_tumble_bijection);
    add("kron", "wikps_equivalence", kron_wikps_equivalence);
    add("kron", "graph_product_pattern", kron_graph_pattern);
    add("attention", "ctc_range", attention_ctc_range);
    add("attention", "ctc_stationary_points", attention_ctc_stationarity);
    add("attention", "positive_dominance", attention_positive_dominance);
    add("attention", "entmax_invariants", attention_entmax_invariants);
    add("attention", "softmax_rows_and_jacobian", attention_softmax_rows);
    add("dictionary", "convex_hull", dictionary_convex_hull);
    add("dictionary", "gradient_flow", dictionary_gradient_flow);
    add("dictionary", "eval_deterministic", dictionary_eval_deterministic);
    add("dictionary", "temperature_support", dictionary_temperature_support);
    add("model", "valence_range", model_theta_range);
    add("model", "st_layer_dense_oracle", model_st_layer_dense_oracle);
    add("model", "residual_identity", model_residual_identity);
    add("model", "head_permutation", model_head_permutation);
    add("model", "eval_deterministic", model_eval_deterministic);
    add("model", "gradient_check", model_gradient_property);
    add("data", "scaler_and_leakage_guard", data_scaler);
    add("data", "standardize_roundtrip", data_roundtrip);
    add("data", "metrics", data_metrics);
    add("data", "window_alignment", data_window_alignment);
    add("data", "synth_determinism_and_missingness", data_synth);
    return v;
  }();
  return props;
}

std::vector<std::string> suite_names() {
  return {"kron", "attention", "dictionary", "model", "data"};
}

std::vector<PropertyResult> run_suite(const std::string& suite, std::uint64_t seed) {
  bool known = suite == "all";
  for (const auto& s : suite_names()) known = known || s == suite;
  if (!known) throw ValueError("verify: unknown suite '" + suite + "'");
  std::vector<PropertyResult> out;
  for (const auto& prop : properties()) {
    if (suite == "all" || prop.suite == suite) out.push_back(prop.run(seed));
  }
  return out;
}

}  // namespace weaver::verify
