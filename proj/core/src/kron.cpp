#include "weaver/kron.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>

namespace weaver::kron {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

std::atomic<double> g_perturbation{0.0};

}  // namespace

namespace testing {
void set_efficient_perturbation(double eps) { g_perturbation.store(eps); }
double efficient_perturbation() { return g_perturbation.load(); }
}  // namespace testing

Tensor kron_dense(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("kron_dense: operands must be matrices");
  }
  const std::size_t a1 = a.dim(0), a2 = a.dim(1);
  const std::size_t b1 = b.dim(0), b2 = b.dim(1);
  Tensor out({a1 * b1, a2 * b2});
  for (std::size_t i = 0; i < a1; ++i) {
    for (std::size_t j = 0; j < a2; ++j) {
      const double aij = a[i * a2 + j];
      for (std::size_t k = 0; k < b1; ++k) {
        for (std::size_t l = 0; l < b2; ++l) {
          out[(i * b1 + k) * (a2 * b2) + (j * b2 + l)] = aij * b[k * b2 + l];
        }
      }
    }
  }
  return out;
}

Tensor kmv_reference(const Tensor& theta_t, const Tensor& theta_s, const Tensor& v) {
  if (theta_t.rank() != 2 || theta_t.dim(0) != theta_t.dim(1)) {
    throw ShapeError("kmv_reference: theta_t must be square");
  }
  if (theta_s.rank() != 2 || theta_s.dim(0) != theta_s.dim(1)) {
    throw ShapeError("kmv_reference: theta_s must be square");
  }
  const std::size_t p = theta_t.dim(0), n = theta_s.dim(0);
  if (v.size() != p * n) {
    throw ShapeError("kmv_reference: |v| = " + std::to_string(v.size()) + " != P*N = " +
                     std::to_string(p * n));
  }
  // Vec^-1: folded[s, t] = v[t*N + s].
  RowMat folded(n, p);
  for (std::size_t t = 0; t < p; ++t) {
    for (std::size_t s = 0; s < n; ++s) folded((Eigen::Index)s, (Eigen::Index)t) = v[t * n + s];
  }
  MapConstMat S(theta_s.data(), (Eigen::Index)n, (Eigen::Index)n);
  MapConstMat T(theta_t.data(), (Eigen::Index)p, (Eigen::Index)p);
  RowMat res = S * folded * T.transpose();  // N x P
  Tensor out({p * n});
  for (std::size_t t = 0; t < p; ++t) {
    for (std::size_t s = 0; s < n; ++s) out[t * n + s] = res((Eigen::Index)s, (Eigen::Index)t);
  }
  return out;
}

// ---------------------------------------------------------------------------
// FactorChain
// ---------------------------------------------------------------------------

FactorChain::FactorChain(std::vector<Tensor> factors) {
  if (factors.empty()) throw ValueError("FactorChain: no factors");
  for (const auto& f : factors) {
    if (f.rank() == 3) {
      had_head_mode_ = true;
      heads_ = f.dim(0);
      break;
    }
  }
  for (auto& f : factors) {
    Tensor lifted = (f.rank() == 2) ? f.reshape({1, f.dim(0), f.dim(1)}) : f;
    if (lifted.rank() != 3) {
      throw ShapeError("FactorChain: factor must be a matrix or head-batched matrix");
    }
    if (lifted.dim(1) != lifted.dim(2)) {
      throw ShapeError("FactorChain: factor not square along its last two modes");
    }
    if (lifted.dim(0) != heads_) {
      throw ShapeError("FactorChain: head counts differ across factors");
    }
    sizes_.push_back(lifted.dim(1));
    factors_.push_back(std::move(lifted));
  }
}

std::size_t FactorChain::size(std::size_t delta) const {
  if (delta < 1 || delta > sizes_.size()) throw ValueError("FactorChain: bad depth index");
  return sizes_[delta - 1];
}

const Tensor& FactorChain::factor(std::size_t delta) const {
  if (delta < 1 || delta > factors_.size()) throw ValueError("FactorChain: bad depth index");
  return factors_[delta - 1];
}

// ---------------------------------------------------------------------------
// KmvOperand and the Kronecker-Tumble
// ---------------------------------------------------------------------------

Shape KmvOperand::expected_shape() const {
  const std::size_t delta = chain.size();
  auto part = [&](std::size_t d) -> std::size_t {  // I_d with I_0 = E, I_{Delta+1} = 1
    if (d == 0) return features;
    if (d == delta + 1) return 1;
    return chain[d - 1];
  };
  std::size_t front = 1, rest = 1;
  for (std::size_t a = 0; a < depth; ++a) front *= part(a);
  for (std::size_t d = depth + 1; d <= delta + 1; ++d) rest *= part(d);
  return Shape{heads, front, rest, part(depth)};
}

void KmvOperand::check() const {
  if (depth > chain.size() + 1) throw ValueError("KmvOperand: depth beyond chain");
  const Shape want = expected_shape();
  if (value.shape() != want) {
    throw ShapeError("KmvOperand: value shape " + shape_str(value.shape()) +
                     " violates the depth-" + std::to_string(depth) + " ledger " +
                     shape_str(want));
  }
}

KmvOperand fold_operand(Tensor natural, std::vector<std::size_t> chain, std::size_t heads) {
  const std::size_t delta = chain.size();
  if (delta == 0) throw ValueError("fold_operand: empty chain");
  // natural is (H x) E x I_1 x ... x I_Delta
  std::size_t prod = 1;
  for (auto d : chain) prod *= d;
  if (natural.size() % (heads * prod) != 0) {
    throw ShapeError("fold_operand: " + shape_str(natural.shape()) +
                     " does not factor the chain");
  }
  const std::size_t features = natural.size() / (heads * prod);
  {
    // Validate the declared mode layout when the caller kept it explicit.
    Shape with_head{heads, features};
    Shape without_head{features};
    for (auto d : chain) {
      with_head.push_back(d);
      without_head.push_back(d);
    }
    if (natural.shape() != with_head && natural.shape() != without_head) {
      throw ShapeError("fold_operand: expected layout " + shape_str(with_head) + " or " +
                       shape_str(without_head) + ", got " + shape_str(natural.shape()));
    }
  }
  KmvOperand op;
  op.chain = std::move(chain);
  op.features = features;
  op.heads = heads;
  op.depth = delta + 1;
  // depth Delta+1 ledger: H x (E I_1 ... I_Delta) x 1 x 1
  op.value = std::move(natural).reshape({heads, features * prod, 1, 1});
  op.check();
  return op;
}

namespace {

// Source H x (f * I_d) x r x j  ->  target H x f x (j * r) x I_d.
// Dedicated permute: the generic rearrangement machinery is correct here but
// this sits on the hot path of every P-KMV step.
Tensor tumble_permute(const Tensor& value, std::size_t i_d) {
  const Shape& s = value.shape();
  const std::size_t h = s[0], f = s[1] / i_d, r = s[2], j = s[3];
  Tensor out({h, f, j * r, i_d});
  const double* src = value.data();
  double* dst = out.data();
  for (std::size_t hh = 0; hh < h; ++hh) {
    for (std::size_t ff = 0; ff < f; ++ff) {
      const double* s_hf = src + ((hh * f + ff) * i_d) * r * j;
      double* d_hf = dst + ((hh * f + ff) * j * r) * i_d;
      for (std::size_t jj = 0; jj < j; ++jj) {
        for (std::size_t rr = 0; rr < r; ++rr) {
          const double* s_col = s_hf + rr * j + jj;  // stride r*j over d
          double* d_row = d_hf + (jj * r + rr) * i_d;
          for (std::size_t dd = 0; dd < i_d; ++dd) d_row[dd] = s_col[dd * r * j];
        }
      }
    }
  }
  return out;
}

KmvOperand tumble_impl(const KmvOperand& u, Tensor* movable) {
  u.check();
  if (u.depth == 0) throw ValueError("kron_tumble: already at depth 0");
  const std::size_t d = u.depth - 1;  // target depth
  const std::size_t delta = u.chain.size();
  auto part = [&](std::size_t q) -> std::size_t {
    if (q == 0) return u.features;
    if (q == delta + 1) return 1;
    return u.chain[q - 1];
  };
  const std::size_t i_d = part(d);
  const Shape& s = u.value.shape();
  if (s[1] % i_d != 0) {
    throw ShapeError("kron_tumble: front mode does not factor I_d");
  }
  KmvOperand out;
  out.chain = u.chain;
  out.features = u.features;
  out.heads = u.heads;
  out.depth = d;
  if (s[2] * s[3] == 1) {
    // Degenerate rest and identity modes: the tumble reindexes nothing.
    const Shape target{s[0], s[1] / i_d, 1, i_d};
    out.value = movable ? std::move(*movable).reshape(target) : u.value.reshape(target);
  } else {
    out.value = tumble_permute(u.value, i_d);
  }
  out.check();
  return out;
}

}  // namespace

KmvOperand kron_tumble(const KmvOperand& u) { return tumble_impl(u, nullptr); }

KmvOperand kron_tumble(KmvOperand&& u) { return tumble_impl(u, &u.value); }

// ---------------------------------------------------------------------------
// P^2-KMV (basic) and (R)-P^Delta-KMV (efficient)
// ---------------------------------------------------------------------------

namespace {

Tensor shape_output(Tensor flat_hne, bool had_head_mode) {
  // flat is H x (prod I) x E; drop the head mode when the inputs had none.
  if (!had_head_mode) {
    Shape s{flat_hne.dim(1), flat_hne.dim(2)};
    return std::move(flat_hne).reshape(std::move(s));
  }
  return flat_hne;
}

}  // namespace

Tensor p2kmv_basic(const FactorChain& factors, const Tensor& v) {
  if (factors.order() != 2) throw ValueError("p2kmv_basic: needs a factor chain of 2");
  const std::size_t h = factors.heads();
  const std::size_t p = factors.size(1), n = factors.size(2);
  const bool v_has_head = (v.rank() == 4);
  Tensor vv = v_has_head ? v : v.reshape([&] {
    Shape s{1};
    for (auto d : v.shape()) s.push_back(d);
    return s;
  }());
  if (vv.rank() != 4 || vv.dim(0) != h || vv.dim(2) != p || vv.dim(3) != n) {
    throw ShapeError("p2kmv_basic: operand " + shape_str(v.shape()) +
                     " violates the (H x) E x P x N ledger");
  }
  const std::size_t e = vv.dim(1);

  // E-stratified KMV-vectorization, then one transposing rearrangement.
  Tensor u1({h, e, n, p});
  for (std::size_t hh = 0; hh < h; ++hh) {
    MapConstMat S(factors.factor(2).data() + hh * n * n, (Eigen::Index)n, (Eigen::Index)n);
    MapConstMat T(factors.factor(1).data() + hh * p * p, (Eigen::Index)p, (Eigen::Index)p);
    for (std::size_t ee = 0; ee < e; ++ee) {
      MapConstMat M(vv.data() + (hh * e + ee) * p * n, (Eigen::Index)p, (Eigen::Index)n);
      MapMat U(u1.data() + (hh * e + ee) * n * p, (Eigen::Index)n, (Eigen::Index)p);
      U.noalias() = S * M.transpose() * T.transpose();
    }
  }
  Tensor out = rearrange(u1, "h e n p -> h (p n) e");
  return shape_output(std::move(out), v_has_head || factors.has_head_mode());
}

Tensor pkmv_efficient(const FactorChain& factors, KmvOperand v) {
  v.check();
  const std::size_t delta = factors.order();
  if (delta < 2) throw ValueError("pkmv_efficient: needs order >= 2");
  if (v.chain != factors.sizes()) {
    throw ShapeError("pkmv_efficient: operand chain does not match the factor chain");
  }
  if (v.heads != factors.heads()) {
    throw ValueError("pkmv_efficient: head count mismatch (operand " +
                     std::to_string(v.heads) + ", factors " +
                     std::to_string(factors.heads()) + ")");
  }
  if (v.depth != delta + 1) {
    throw ValueError("pkmv_efficient: operand must enter at depth Delta+1");
  }
  // The Delta+1 identity factor is implicit: the first tumble is pure
  // rearrangement, no arithmetic.
  KmvOperand u = kron_tumble(std::move(v));
  for (std::size_t d = delta; d >= 1; --d) {
    const Tensor& th = factors.factor(d);
    const Shape s = u.value.shape();
    Tensor flat = std::move(u.value).reshape({s[0], s[1] * s[2], s[3]});
    Tensor prod = batched_matmul(flat, th, /*transpose_b=*/true);
    u.value = std::move(prod).reshape({s[0], s[1], s[2], s[3]});
    u = kron_tumble(u);
  }
  // depth 0: H x 1 x (I_1 ... I_Delta) x E.
  Tensor out = u.value.reshape({u.heads, u.value.dim(2), u.features});
  if (double eps = testing::efficient_perturbation(); eps != 0.0) {
    out[0] += eps;
  }
  return shape_output(std::move(out), factors.has_head_mode());
}

Tensor pkmv_efficient(const FactorChain& factors, const Tensor& v_natural) {
  const bool has_head = v_natural.rank() == factors.order() + 2;
  const std::size_t heads = has_head ? v_natural.dim(0) : 1;
  Tensor lifted = has_head ? v_natural : v_natural.reshape([&] {
    Shape s{1};
    for (auto d : v_natural.shape()) s.push_back(d);
    return s;
  }());
  Tensor out =
      pkmv_efficient(factors, fold_operand(std::move(lifted), factors.sizes(), heads));
  if (has_head && out.rank() == 2) {
    out = std::move(out).reshape({1, out.dim(0), out.dim(1)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// W-iKPS
// ---------------------------------------------------------------------------

Tensor wikps_expand(const std::vector<Tensor>& per_head_weights) {
  if (per_head_weights.empty()) throw ValueError("wikps_expand: no head weights");
  const Tensor& w0 = per_head_weights.front();
  if (w0.rank() != 2) throw ShapeError("wikps_expand: weights must be matrices");
  const std::size_t e = w0.dim(0), c = w0.dim(1);
  for (const auto& w : per_head_weights) {
    if (w.rank() != 2 || w.dim(0) != e || w.dim(1) != c) {
      throw ShapeError("wikps_expand: inconsistent per-head weight shapes");
    }
  }
  const std::size_t h = per_head_weights.size();
  Tensor out({h * e, c});
  for (std::size_t hh = 0; hh < h; ++hh) {
    const Tensor& w = per_head_weights[hh];
    std::copy(w.data(), w.data() + e * c, out.data() + hh * e * c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kronecker graph product
// ---------------------------------------------------------------------------

namespace {

void check_binary(const Tensor& a, const char* name) {
  if (a.rank() != 2) throw ShapeError(std::string("kron_graph_edges: ") + name +
                                      " must be a matrix");
  for (double x : a.values()) {
    if (x != 0.0 && x != 1.0) {
      throw ValueError(std::string("kron_graph_edges: ") + name + " is not binary");
    }
  }
}

}  // namespace

KronGraphEdges::KronGraphEdges(Tensor a_t, Tensor a_s)
    : a_t_(std::move(a_t)), a_s_(std::move(a_s)) {
  check_binary(a_t_, "a_t");
  check_binary(a_s_, "a_s");
  if (a_t_.dim(0) != a_t_.dim(1) || a_s_.dim(0) != a_s_.dim(1)) {
    throw ShapeError("kron_graph_edges: adjacencies must be square");
  }
  p_ = a_t_.dim(0);
  n_ = a_s_.dim(0);
}

bool KronGraphEdges::edge(std::size_t sigma1, std::size_t tau1, std::size_t sigma2,
                          std::size_t tau2) const {
  return a_s_[sigma1 * n_ + sigma2] == 1.0 && a_t_[tau1 * p_ + tau2] == 1.0;
}

Tensor KronGraphEdges::dense() const {
  const std::size_t pn = p_ * n_;
  Tensor out({pn, pn});
  for (std::size_t t1 = 0; t1 < p_; ++t1) {
    for (std::size_t s1 = 0; s1 < n_; ++s1) {
      for (std::size_t t2 = 0; t2 < p_; ++t2) {
        for (std::size_t s2 = 0; s2 < n_; ++s2) {
          if (edge(s1, t1, s2, t2)) {
            out[(t1 * n_ + s1) * pn + (t2 * n_ + s2)] = 1.0;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace weaver::kron
