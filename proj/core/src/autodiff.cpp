#include "weaver/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace weaver::ad {

namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ValueError("ad: operands live on different tapes");
}

/// Sums `g` down to `target` (same rank with size-1 modes, or rank-0).
Tensor reduce_to(const Tensor& g, const Shape& target) {
  if (g.shape() == target) return g;
  if (target.empty()) {
    double s = 0.0;
    for (double x : g.values()) s += x;
    return Tensor::scalar(s);
  }
  Tensor cur = g;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 1 && cur.shape()[i] != 1) {
      Tensor summed = weaver::mode_sum(cur, i + 1);
      Shape keep = cur.shape();
      keep[i] = 1;
      cur = std::move(summed).reshape(keep);
    }
  }
  return cur;
}

/// Repeats `g` along a new mode of size `len` inserted at `mode` (1-based).
Tensor expand_mode(const Tensor& g, std::size_t mode, std::size_t len) {
  Shape out_shape = g.shape();
  out_shape.insert(out_shape.begin() + (mode - 1), len);
  Tensor out(out_shape);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i + 1 < mode; ++i) outer *= g.shape()[i];
  for (std::size_t i = mode - 1; i < g.rank(); ++i) inner *= g.shape()[i];
  for (std::size_t a = 0; a < outer; ++a) {
    const double* src = g.data() + a * inner;
    for (std::size_t m = 0; m < len; ++m) {
      double* dst = out.data() + (a * len + m) * inner;
      for (std::size_t b = 0; b < inner; ++b) dst[b] += src[b];
    }
  }
  return out;
}

Tensor transpose_last2(const Tensor& t) {
  const std::size_t r = t.rank();
  const std::size_t R = t.shape()[r - 2], C = t.shape()[r - 1];
  Shape out_shape = t.shape();
  std::swap(out_shape[r - 2], out_shape[r - 1]);
  Tensor out(out_shape);
  const std::size_t nb = t.size() / (R * C);
  for (std::size_t n = 0; n < nb; ++n) {
    const double* src = t.data() + n * R * C;
    double* dst = out.data() + n * R * C;
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t j = 0; j < C; ++j) dst[j * R + i] = src[i * C + j];
    }
  }
  return out;
}

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (auto& x : out.values()) x = f(x);
  Tensor saved = a.value();
  return t.record(std::move(out), {a}, [a, saved, df](Tape& tp, const Tensor& g) {
    Tensor ga(saved.shape());
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = g[i] * df(saved[i]);
    tp.accumulate(a, ga);
  });
}

}  // namespace

const Tensor& Var::value() const { return tape_->value(*this); }
const Shape& Var::shape() const { return value().shape(); }

Var Tape::variable(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<Var> parents,
                 std::function<void(Tape&, const Tensor&)> pull) {
  bool needs = false;
  for (const auto& p : parents) {
    if (p.tape() != this) throw ValueError("ad: parent from another tape");
    nodes_[p.id()].use_count++;
    needs = needs || nodes_[p.id()].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(const Var& v) const { return nodes_.at(v.id()).value; }

bool Tape::requires_grad(const Var& v) const { return nodes_.at(v.id()).requires_grad; }

const Tensor& Tape::grad(const Var& v) {
  Node& n = nodes_.at(v.id());
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
  Node& n = nodes_.at(v.id());
  if (g.shape() != n.value.shape()) {
    throw ShapeError("ad: adjoint shape " + shape_str(g.shape()) + " != value shape " +
                     shape_str(n.value.shape()));
  }
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

BackwardReport Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw ValueError("ad: loss lives on another tape");
  if (value(loss).rank() != 0) {
    throw ValueError("ad: backward requires a rank-0 loss, got " +
                     shape_str(value(loss).shape()));
  }
  for (auto& n : nodes_) {
    n.grad = Tensor();
    n.has_grad = false;
  }
  accumulate(loss, Tensor::scalar(1.0));
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.pull || !n.has_grad) continue;
    n.pull(*this, n.grad);
  }
  BackwardReport report;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (n.requires_grad && !n.pull && n.use_count == 0 && i != loss.id()) {
      report.detached.push_back(Var(this, i));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

namespace {

enum class BinOp { Add, Sub, Mul, Div };

Var binary(const Var& a, const Var& b, BinOp op) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out;
  switch (op) {
    case BinOp::Add: out = ew_add(av, bv); break;
    case BinOp::Sub: out = ew_sub(av, bv); break;
    case BinOp::Mul: out = ew_mul(av, bv); break;
    case BinOp::Div: out = ew_div(av, bv); break;
  }
  return t.record(std::move(out), {a, b}, [a, b, op](Tape& tp, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    switch (op) {
      case BinOp::Add:
        tp.accumulate(a, reduce_to(g, av.shape()));
        tp.accumulate(b, reduce_to(g, bv.shape()));
        break;
      case BinOp::Sub:
        tp.accumulate(a, reduce_to(g, av.shape()));
        tp.accumulate(b, reduce_to(ew_scale(g, -1.0), bv.shape()));
        break;
      case BinOp::Mul:
        tp.accumulate(a, reduce_to(ew_mul(g, bv), av.shape()));
        tp.accumulate(b, reduce_to(ew_mul(g, av), bv.shape()));
        break;
      case BinOp::Div: {
        tp.accumulate(a, reduce_to(ew_div(g, bv), av.shape()));
        Tensor gb = ew_mul(g, ew_div(av, ew_mul(bv, bv)));
        tp.accumulate(b, reduce_to(ew_scale(gb, -1.0), bv.shape()));
        break;
      }
    }
  });
}

}  // namespace

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::Div); }

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  Tape& t = *a.tape();
  return t.record(ew_scale(a.value(), c), {a}, [a, c](Tape& tp, const Tensor& g) {
    tp.accumulate(a, ew_scale(g, c));
  });
}

Var add_scalar(const Var& a, double c) {
  Tape& t = *a.tape();
  Tensor out = a.value();
  for (auto& x : out.values()) x += c;
  return t.record(std::move(out), {a},
                  [a](Tape& tp, const Tensor& g) { tp.accumulate(a, g); });
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var exp_(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double x) { return std::exp(x); });
}

Var log_(const Var& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x) { return 1.0 / x; });
}

Var sqrt_(const Var& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double x) { return 0.5 / std::sqrt(x); });
}

Var abs_(const Var& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sigmoid(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double x) {
                 const double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 - s);
               });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
  return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
               [slope](double x) { return x > 0.0 ? 1.0 : slope; });
}

Var softplus(const Var& a) {
  // log1p(exp(x)) with the standard large-x guard.
  auto f = [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); };
  auto df = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return unary(a, f, df);
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  Tape& t = *a.tape();
  Shape old = a.shape();
  return t.record(a.value().reshape(shape), {a}, [a, old](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g.reshape(old));
  });
}

Var rearrange(const Var& a, const std::string& spec, const AxisSizes& sizes) {
  Tape& t = *a.tape();
  RearrangeSpec s = RearrangeSpec::parse(spec);
  s.bind(a.shape(), sizes);
  Tensor out = s.apply(a.value());
  RearrangeSpec inv = s.inverted();
  return t.record(std::move(out), {a}, [a, inv](Tape& tp, const Tensor& g) {
    tp.accumulate(a, inv.apply(g));
  });
}

Var mode_sum(const Var& a, std::size_t mode) {
  Tape& t = *a.tape();
  const std::size_t len = a.shape().at(mode - 1);
  return t.record(weaver::mode_sum(a.value(), mode), {a},
                  [a, mode, len](Tape& tp, const Tensor& g) {
                    tp.accumulate(a, expand_mode(g, mode, len));
                  });
}

Var mode_mean(const Var& a, std::size_t mode) {
  const double inv = 1.0 / double(a.shape().at(mode - 1));
  return scale(mode_sum(a, mode), inv);
}

Var concat(const std::vector<Var>& vs, std::size_t mode) {
  if (vs.empty()) throw ValueError("ad::concat: no operands");
  Tape& t = *vs[0].tape();
  std::vector<Tensor> vals;
  vals.reserve(vs.size());
  for (const auto& v : vs) {
    check_same_tape(vs[0], v);
    vals.push_back(v.value());
  }
  Tensor out = weaver::concat(std::span<const Tensor>(vals), mode);
  std::vector<std::size_t> lens;
  for (const auto& v : vs) lens.push_back(v.shape()[mode - 1]);
  return t.record(std::move(out), vs, [vs, lens, mode](Tape& tp, const Tensor& g) {
    std::size_t outer = 1, inner = 1, total = g.shape()[mode - 1];
    for (std::size_t i = 0; i + 1 < mode; ++i) outer *= g.shape()[i];
    for (std::size_t i = mode; i < g.rank(); ++i) inner *= g.shape()[i];
    std::size_t at = 0;
    for (std::size_t k = 0; k < vs.size(); ++k) {
      Tensor gk(vs[k].shape());
      for (std::size_t a = 0; a < outer; ++a) {
        const double* src = g.data() + (a * total + at) * inner;
        double* dst = gk.data() + a * lens[k] * inner;
        std::copy(src, src + lens[k] * inner, dst);
      }
      tp.accumulate(vs[k], gk);
      at += lens[k];
    }
  });
}

Var slice_mode(const Var& a, std::size_t mode, std::size_t start, std::size_t len) {
  Tape& t = *a.tape();
  const Shape& sh = a.shape();
  if (mode < 1 || mode > sh.size() || start + len > sh[mode - 1] || len == 0) {
    throw ValueError("ad::slice_mode: bad slice");
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i + 1 < mode; ++i) outer *= sh[i];
  for (std::size_t i = mode; i < sh.size(); ++i) inner *= sh[i];
  Shape out_shape = sh;
  out_shape[mode - 1] = len;
  Tensor out(out_shape);
  const std::size_t total = sh[mode - 1];
  for (std::size_t x = 0; x < outer; ++x) {
    const double* src = a.value().data() + (x * total + start) * inner;
    std::copy(src, src + len * inner, out.data() + x * len * inner);
  }
  return t.record(std::move(out), {a},
                  [a, mode, start, len, outer, inner, total](Tape& tp, const Tensor& g) {
                    Tensor ga(a.shape());
                    for (std::size_t x = 0; x < outer; ++x) {
                      const double* src = g.data() + x * len * inner;
                      double* dst = ga.data() + (x * total + start) * inner;
                      std::copy(src, src + len * inner, dst);
                    }
                    tp.accumulate(a, ga);
                  });
}

namespace {

// Shared index bookkeeping for gather/scatter along a mode with per-fiber
// indices that broadcast over size-1 index modes.
struct GatherPlan {
  std::size_t mode, k;
  std::size_t f_outer = 1, f_len = 1, f_inner = 1;
  Shape f_outer_dims, f_inner_dims, i_outer_dims, i_inner_dims;

  GatherPlan(const Shape& src, const Shape& index_shape, std::size_t m, std::size_t kk)
      : mode(m), k(kk) {
    if (index_shape.size() != src.size()) {
      throw ShapeError("take_along_mode: index rank mismatch");
    }
    f_len = src[m - 1];
    for (std::size_t i = 0; i + 1 < m; ++i) {
      f_outer *= src[i];
      f_outer_dims.push_back(src[i]);
      i_outer_dims.push_back(index_shape[i]);
    }
    for (std::size_t i = m; i < src.size(); ++i) {
      f_inner *= src[i];
      f_inner_dims.push_back(src[i]);
      i_inner_dims.push_back(index_shape[i]);
    }
  }

  static std::size_t project(std::size_t flat, const Shape& dims, const Shape& idims) {
    std::vector<std::size_t> coords(dims.size());
    std::size_t rem = flat;
    for (std::size_t i = dims.size(); i-- > 0;) {
      coords[i] = rem % dims[i];
      rem /= dims[i];
    }
    std::size_t res = 0;
    for (std::size_t i = 0; i < idims.size(); ++i) {
      res = res * idims[i] + (idims[i] == 1 ? 0 : coords[i]);
    }
    return res;
  }

  std::size_t i_inner_prod() const {
    std::size_t p = 1;
    for (auto d : i_inner_dims) p *= d;
    return p;
  }
};

}  // namespace

Var take_along_mode(const Var& a, const std::vector<std::size_t>& indices,
                    const Shape& index_shape, std::size_t mode) {
  Tape& t = *a.tape();
  const std::size_t k = index_shape.at(mode - 1);
  GatherPlan plan(a.shape(), index_shape, mode, k);
  const std::size_t ii = plan.i_inner_prod();
  Shape out_shape = a.shape();
  out_shape[mode - 1] = k;
  Tensor out(out_shape);
  const Tensor& av = a.value();
  for (std::size_t x = 0; x < plan.f_outer; ++x) {
    const std::size_t sx = GatherPlan::project(x, plan.f_outer_dims, plan.i_outer_dims);
    for (std::size_t b = 0; b < plan.f_inner; ++b) {
      const std::size_t sb = GatherPlan::project(b, plan.f_inner_dims, plan.i_inner_dims);
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t m = indices[(sx * k + j) * ii + sb];
        out[(x * k + j) * plan.f_inner + b] = av[(x * plan.f_len + m) * plan.f_inner + b];
      }
    }
  }
  return t.record(std::move(out), {a},
                  [a, indices, plan, ii](Tape& tp, const Tensor& g) {
                    Tensor ga(a.shape());
                    for (std::size_t x = 0; x < plan.f_outer; ++x) {
                      const std::size_t sx =
                          GatherPlan::project(x, plan.f_outer_dims, plan.i_outer_dims);
                      for (std::size_t b = 0; b < plan.f_inner; ++b) {
                        const std::size_t sb =
                            GatherPlan::project(b, plan.f_inner_dims, plan.i_inner_dims);
                        for (std::size_t j = 0; j < plan.k; ++j) {
                          const std::size_t m = indices[(sx * plan.k + j) * ii + sb];
                          ga[(x * plan.f_len + m) * plan.f_inner + b] +=
                              g[(x * plan.k + j) * plan.f_inner + b];
                        }
                      }
                    }
                    tp.accumulate(a, ga);
                  });
}

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  check_same_tape(a, b);
  Tape& t = *a.tape();
  Tensor out = batched_matmul(a.value(), b.value(), transpose_b);
  return t.record(std::move(out), {a, b}, [a, b, transpose_b](Tape& tp, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!transpose_b) {
      tp.accumulate(a, reduce_to(batched_matmul(g, bv, true), av.shape()));
      tp.accumulate(b, reduce_to(batched_matmul(transpose_last2(av), g, false), bv.shape()));
    } else {
      tp.accumulate(a, reduce_to(batched_matmul(g, bv, false), av.shape()));
      tp.accumulate(b, reduce_to(batched_matmul(transpose_last2(g), av, false), bv.shape()));
    }
  });
}

Var linear(const Var& x, const Var& w) {
  if (w.rank() != 2) throw ShapeError("ad::linear: weight must be a matrix");
  const std::size_t K = w.shape()[0];
  const std::size_t rows = shape_product(x.shape()) / K;
  Shape out_shape = x.shape();
  out_shape.back() = w.shape()[1];
  Var flat = reshape(x, {1, rows, K});
  Var wb = reshape(w, {1, K, w.shape()[1]});
  return reshape(matmul(flat, wb, false), out_shape);
}

Var add_bias(const Var& x, const Var& b) {
  if (b.rank() != 1 || b.shape()[0] != x.shape().back()) {
    throw ShapeError("ad::add_bias: bias must match the last mode");
  }
  Shape bshape(x.rank(), 1);
  bshape.back() = b.shape()[0];
  return add(x, reshape(b, bshape));
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Var sum_all(const Var& a) {
  Tape& t = *a.tape();
  double s = 0.0;
  for (double x : a.value().values()) s += x;
  return t.record(Tensor::scalar(s), {a}, [a](Tape& tp, const Tensor& g) {
    tp.accumulate(a, Tensor::full(a.shape(), g.item()));
  });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / double(a.value().size())); }

// ---------------------------------------------------------------------------
// neural-net compositions
// ---------------------------------------------------------------------------

Var softmax(const Var& a, std::size_t mode) {
  Tape& t = *a.tape();
  // Constant per-fiber max; shifting by a constant leaves both the value and
  // the gradient of softmax unchanged.
  const Tensor& av = a.value();
  std::size_t outer = 1, inner = 1;
  const std::size_t len = av.shape().at(mode - 1);
  for (std::size_t i = 0; i + 1 < mode; ++i) outer *= av.shape()[i];
  for (std::size_t i = mode; i < av.rank(); ++i) inner *= av.shape()[i];
  Shape mshape = av.shape();
  mshape[mode - 1] = 1;
  Tensor mx(mshape);
  for (std::size_t x = 0; x < outer; ++x) {
    for (std::size_t b = 0; b < inner; ++b) {
      double m = av[(x * len) * inner + b];
      for (std::size_t j = 1; j < len; ++j) {
        m = std::max(m, av[(x * len + j) * inner + b]);
      }
      mx[x * inner + b] = m;
    }
  }
  Var shifted = sub(a, t.constant(std::move(mx)));
  Var e = exp_(shifted);
  Var denom = mode_sum(e, mode);
  Shape dshape = av.shape();
  dshape[mode - 1] = 1;
  return div(e, reshape(denom, dshape));
}

Var glu(const Var& a) {
  const std::size_t last = a.rank();
  const std::size_t width = a.shape().back();
  if (width % 2 != 0) throw ShapeError("ad::glu: last mode must be even");
  Var signal = slice_mode(a, last, 0, width / 2);
  Var gate = slice_mode(a, last, width / 2, width / 2);
  return mul(signal, sigmoid(gate));
}

Var rms_norm(const Var& a, double eps) {
  const std::size_t last = a.rank();
  Var ms = mode_mean(mul(a, a), last);
  Shape dshape = a.shape();
  dshape.back() = 1;
  Var denom = reshape(sqrt_(add_scalar(ms, eps)), dshape);
  return div(a, denom);
}

Var dropout(const Var& a, double rate, bool training, Rng& rng) {
  if (!training || rate <= 0.0) return a;
  if (rate >= 1.0) throw ValueError("ad::dropout: rate must be < 1");
  Tape& t = *a.tape();
  const double keep = 1.0 - rate;
  Tensor mask(a.shape());
  for (auto& m : mask.values()) m = (rng.uniform() < keep) ? 1.0 / keep : 0.0;
  Tensor out = ew_mul(a.value(), mask);
  return t.record(std::move(out), {a}, [a, mask](Tape& tp, const Tensor& g) {
    tp.accumulate(a, ew_mul(g, mask));
  });
}

}  // namespace weaver::ad
