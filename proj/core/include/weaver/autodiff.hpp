#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

namespace weaver::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct BackwardReport {
  /// Grad-requiring leaves that no recorded operation consumed. Their
  /// gradient is zero; this is reported, not fatal.
  std::vector<Var> detached;
};

/// Ordered record of primitive operations. Replaying adjoints visits the
/// record in reverse application order exactly once. Single-threaded.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var variable(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return variable(std::move(value), false); }

  /// Records one primitive. `pull` receives the node's output adjoint and
  /// must accumulate into the parents. Ops outside this header use this to
  /// define custom primitives (entmax, dropout, gathers).
  Var record(Tensor value, std::vector<Var> parents,
             std::function<void(Tape&, const Tensor&)> pull);

  /// References stay valid as the tape grows (node storage never relocates).
  const Tensor& value(const Var& v) const;
  /// Gradient accumulated by the last backward pass (zeros if untouched).
  const Tensor& grad(const Var& v);
  void accumulate(const Var& v, const Tensor& g);

  /// Reverse accumulation from a rank-0 loss node.
  BackwardReport backward(const Var& loss);

  std::size_t node_count() const { return nodes_.size(); }
  bool requires_grad(const Var& v) const;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::size_t use_count = 0;
    std::function<void(Tape&, const Tensor&)> pull;
  };
  std::deque<Node> nodes_;
};

// --- arithmetic (size-1 mode broadcasting, or one rank-0 side) -------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

// --- elementwise -----------------------------------------------------------
Var exp_(const Var& a);
Var log_(const Var& a);
Var sqrt_(const Var& a);
Var abs_(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var softplus(const Var& a);

// --- structure -------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var rearrange(const Var& a, const std::string& spec, const AxisSizes& sizes = {});
Var mode_sum(const Var& a, std::size_t mode);
Var mode_mean(const Var& a, std::size_t mode);
Var concat(const std::vector<Var>& vs, std::size_t mode);
Var slice_mode(const Var& a, std::size_t mode, std::size_t start, std::size_t len);
/// Gather along `mode` with per-fiber indices (layout `index_shape`, size-1
/// modes broadcast against the source). Adjoint scatter-adds.
Var take_along_mode(const Var& a, const std::vector<std::size_t>& indices,
                    const Shape& index_shape, std::size_t mode);

Var matmul(const Var& a, const Var& b, bool transpose_b = false);
/// x (... x K) times weight (K x E).
Var linear(const Var& x, const Var& w);
/// Adds a length-E bias along the last mode.
Var add_bias(const Var& x, const Var& b);

// --- reductions ------------------------------------------------------------
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// --- neural-net compositions ------------------------------------------------
/// Max-subtracted softmax along `mode`.
Var softmax(const Var& a, std::size_t mode);
/// Gated linear unit over the last mode (signal half times sigmoid of gate half).
Var glu(const Var& a);
Var rms_norm(const Var& a, double eps = 1e-8);
/// Inverted dropout; identity when `training` is false.
Var dropout(const Var& a, double rate, bool training, Rng& rng);

}  // namespace weaver::ad
