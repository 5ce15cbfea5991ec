#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace weaver {

/// Thrown when tensor shapes do not satisfy an operation's contract.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown on invalid argument values (bad mode index, k out of range, ...).
class ValueError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

/// Dense n-mode array of doubles, row-major with the last mode fastest.
/// A rank-0 tensor holds a single scalar. Tensors are plain values;
/// operations on them are pure functions.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  /// Identity matrix of order n.
  static Tensor eye(std::size_t n);

  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  /// Row-major strides (last mode has stride 1).
  Shape strides() const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() & { return data_; }
  std::span<const double> values() const& { return data_; }
  // A span into a temporary would dangle.
  std::span<double> values() && = delete;
  std::span<const double> values() const&& = delete;

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// Scalar value of a rank-0 (or single-element) tensor.
  double item() const;

  /// Same data, new shape; products must agree.
  Tensor reshape(Shape shape) const&;
  Tensor reshape(Shape shape) &&;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  Shape shape_;  // empty = rank-0 scalar
  std::vector<double> data_;
};

std::size_t shape_product(const Shape& s);

// ---------------------------------------------------------------------------
// Mode rearrangement
//
// Specs use einops-style strings: "a b -> b a", "h n d -> n (h d)",
// "(h d) p n -> h (d p) n". Axis names are alphanumeric identifiers;
// parentheses group axes into one mode. Sizes of grouped source axes that
// cannot be inferred from the source shape must be supplied via `sizes`.
// ---------------------------------------------------------------------------

using AxisSizes = std::map<std::string, std::size_t>;

class RearrangeSpec {
 public:
  static RearrangeSpec parse(const std::string& spec);

  /// Resolves axis sizes against a concrete source shape.
  /// Throws ShapeError when the spec does not factor the shape.
  void bind(const Shape& source, const AxisSizes& sizes);

  Tensor apply(const Tensor& t) const;
  /// The spec with source and target sides swapped (sizes already bound).
  RearrangeSpec inverted() const;

  const Shape& target_shape() const { return target_shape_; }
  std::string str() const { return text_; }

 private:
  std::string text_;
  std::vector<std::vector<std::string>> src_groups_;
  std::vector<std::vector<std::string>> tgt_groups_;
  // bound state
  std::vector<std::string> axis_names_;   // source order
  std::vector<std::size_t> axis_sizes_;   // source order
  std::vector<std::size_t> tgt_axis_of_;  // target atomic position -> source axis
  Shape source_shape_;
  Shape target_shape_;
  bool bound_ = false;
};

Tensor rearrange(const Tensor& t, const std::string& spec, const AxisSizes& sizes = {});

// ---------------------------------------------------------------------------
// Mode calculus. Modes are 1-based throughout, following the tensor-calculus
// convention (mode-1 is the leading axis).
// ---------------------------------------------------------------------------

Tensor mode_sum(const Tensor& t, std::size_t mode);
Tensor mode_mean(const Tensor& t, std::size_t mode);
/// Biased variance (divide by the mode size) along `mode`; the mode collapses.
Tensor mode_variance(const Tensor& t, std::size_t mode);

struct TopKResult {
  Tensor source;                      // mode m reduced to k
  Tensor scores;                      // scores shape with mode m reduced to k
  std::vector<std::size_t> indices;   // original indices, laid out like `scores`
  Shape index_shape;
};

/// Selects the k highest-score slices along `mode`, descending by score.
/// Selection is independent per score fiber; ties keep the lowest original
/// index. `scores` must match `source` on every mode, except that modes other
/// than `mode` may be 1 in `scores` (the selection then broadcasts).
TopKResult top_k_select(const Tensor& source, const Tensor& scores,
                        std::size_t mode, std::size_t k);

/// Batched matrix multiplication. The last two modes multiply; leading modes
/// stratify independent products and broadcast where one operand has size 1.
/// With transpose_b the contraction runs over the last mode of both operands.
Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// a (... x K) times w (K x E) along the last mode.
Tensor matmul_last(const Tensor& a, const Tensor& w);

Tensor concat(std::span<const Tensor> ts, std::size_t mode);
Tensor concat(std::initializer_list<Tensor> ts, std::size_t mode);

// Elementwise helpers with size-1 mode broadcasting (equal rank, or one side
// rank-0). Used by oracles and non-differentiable paths.
Tensor ew_add(const Tensor& a, const Tensor& b);
Tensor ew_sub(const Tensor& a, const Tensor& b);
Tensor ew_mul(const Tensor& a, const Tensor& b);
Tensor ew_div(const Tensor& a, const Tensor& b);
Tensor ew_scale(const Tensor& a, double c);

double max_abs_diff(const Tensor& a, const Tensor& b);
double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-12);

}  // namespace weaver
