#include "weaver/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

namespace weaver {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

[[noreturn]] void throw_shape(const std::string& what) { throw ShapeError(what); }

void check_mode(const Tensor& t, std::size_t mode, const char* op) {
  if (mode < 1 || mode > t.rank()) {
    throw ValueError(std::string(op) + ": invalid mode " + std::to_string(mode) +
                     " for rank-" + std::to_string(t.rank()) + " tensor");
  }
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& s) {
  std::size_t p = 1;
  for (auto d : s) p *= d;
  return p;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (auto d : shape_) {
    if (d == 0) throw_shape("Tensor: zero mode size in " + shape_str(shape_));
  }
  data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_) {
    if (d == 0) throw_shape("Tensor: zero mode size in " + shape_str(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw_shape("Tensor: shape " + shape_str(shape_) + " does not match " +
                std::to_string(data_.size()) + " scalars");
  }
}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.data_[0] = v;
  return t;
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), v);
  return t;
}

Tensor Tensor::eye(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
  return t;
}

Shape Tensor::strides() const {
  Shape s(shape_.size(), 1);
  for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
  return s;
}

namespace {

std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> idx) {
  if (idx.size() != shape.size()) {
    throw ValueError("Tensor::at: index rank mismatch");
  }
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : idx) {
    if (v >= shape[i]) throw ValueError("Tensor::at: index out of range");
    flat = flat * shape[i] + v;
    ++i;
  }
  return flat;
}

}  // namespace

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return data_[flat_index(shape_, idx)];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[flat_index(shape_, idx)];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ValueError("Tensor::item: tensor has " + std::to_string(data_.size()) +
                     " elements");
  }
  return data_[0];
}

Tensor Tensor::reshape(Shape shape) const& {
  if (shape_product(shape) != data_.size()) {
    throw_shape("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                " changes element count");
  }
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::reshape(Shape shape) && {
  if (shape_product(shape) != data_.size()) {
    throw_shape("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                " changes element count");
  }
  return Tensor(std::move(shape), std::move(data_));
}

// ---------------------------------------------------------------------------
// rearrange
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> parse_side(const std::string& side,
                                                 const std::string& spec) {
  std::vector<std::vector<std::string>> groups;
  std::size_t i = 0;
  auto skip_ws = [&] { while (i < side.size() && std::isspace((unsigned char)side[i])) ++i; };
  auto read_name = [&]() -> std::string {
    std::size_t b = i;
    while (i < side.size() && (std::isalnum((unsigned char)side[i]) || side[i] == '_')) ++i;
    if (i == b) throw ValueError("rearrange: bad axis name in spec '" + spec + "'");
    return side.substr(b, i - b);
  };
  skip_ws();
  while (i < side.size()) {
    if (side[i] == '(') {
      ++i;
      std::vector<std::string> g;
      skip_ws();
      while (i < side.size() && side[i] != ')') {
        g.push_back(read_name());
        skip_ws();
      }
      if (i >= side.size()) throw ValueError("rearrange: unbalanced '(' in '" + spec + "'");
      ++i;  // ')'
      groups.push_back(std::move(g));
    } else {
      groups.push_back({read_name()});
    }
    skip_ws();
  }
  return groups;
}

}  // namespace

RearrangeSpec RearrangeSpec::parse(const std::string& spec) {
  auto arrow = spec.find("->");
  if (arrow == std::string::npos) {
    throw ValueError("rearrange: spec '" + spec + "' has no '->'");
  }
  RearrangeSpec r;
  r.text_ = spec;
  r.src_groups_ = parse_side(spec.substr(0, arrow), spec);
  r.tgt_groups_ = parse_side(spec.substr(arrow + 2), spec);

  std::vector<std::string> src_axes, tgt_axes;
  for (const auto& g : r.src_groups_) src_axes.insert(src_axes.end(), g.begin(), g.end());
  for (const auto& g : r.tgt_groups_) tgt_axes.insert(tgt_axes.end(), g.begin(), g.end());
  auto sorted = [](std::vector<std::string> v) { std::sort(v.begin(), v.end()); return v; };
  auto ss = sorted(src_axes);
  if (std::adjacent_find(ss.begin(), ss.end()) != ss.end()) {
    throw ValueError("rearrange: repeated axis in '" + spec + "'");
  }
  if (ss != sorted(tgt_axes)) {
    throw ValueError("rearrange: source and target axes differ in '" + spec + "'");
  }
  return r;
}

void RearrangeSpec::bind(const Shape& source, const AxisSizes& sizes) {
  if (source.size() != src_groups_.size()) {
    throw_shape("rearrange '" + text_ + "': expects rank " +
                std::to_string(src_groups_.size()) + ", got " + shape_str(source));
  }
  source_shape_ = source;
  axis_names_.clear();
  axis_sizes_.clear();
  std::map<std::string, std::size_t> resolved;
  for (std::size_t m = 0; m < src_groups_.size(); ++m) {
    const auto& g = src_groups_[m];
    std::size_t known = 1;
    int unknown = -1;
    for (std::size_t j = 0; j < g.size(); ++j) {
      auto it = sizes.find(g[j]);
      if (it != sizes.end()) {
        known *= it->second;
      } else if (g.size() == 1) {
        known *= source[m];
        it = sizes.end();
      } else if (unknown < 0) {
        unknown = (int)j;
      } else {
        throw_shape("rearrange '" + text_ + "': group has several unknown axes");
      }
    }
    if (unknown >= 0) {
      if (known == 0 || source[m] % known != 0) {
        throw_shape("rearrange '" + text_ + "': sizes do not factor mode " +
                    std::to_string(m + 1) + " of " + shape_str(source));
      }
    } else if (known != source[m]) {
      throw_shape("rearrange '" + text_ + "': group size " + std::to_string(known) +
                  " != mode size " + std::to_string(source[m]));
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
      std::size_t sz;
      auto it = sizes.find(g[j]);
      if (it != sizes.end()) sz = it->second;
      else if (g.size() == 1) sz = source[m];
      else sz = source[m] / known;
      resolved[g[j]] = sz;
      axis_names_.push_back(g[j]);
      axis_sizes_.push_back(sz);
    }
  }
  tgt_axis_of_.clear();
  target_shape_.clear();
  for (const auto& g : tgt_groups_) {
    std::size_t prod = 1;
    for (const auto& name : g) {
      auto it = std::find(axis_names_.begin(), axis_names_.end(), name);
      tgt_axis_of_.push_back(std::size_t(it - axis_names_.begin()));
      prod *= resolved[name];
    }
    target_shape_.push_back(prod);
  }
  bound_ = true;
}

Tensor RearrangeSpec::apply(const Tensor& t) const {
  if (!bound_) throw ValueError("rearrange: spec not bound");
  if (t.shape() != source_shape_) {
    throw_shape("rearrange '" + text_ + "': bound for " + shape_str(source_shape_) +
                ", got " + shape_str(t.shape()));
  }
  const std::size_t n_axes = axis_names_.size();
  // Source strides per atomic axis.
  std::vector<std::size_t> src_stride(n_axes, 1);
  {
    std::size_t s = 1;
    for (std::size_t i = n_axes; i-- > 0;) {
      src_stride[i] = s;
      s *= axis_sizes_[i];
    }
  }
  Tensor out(target_shape_);
  const std::size_t total = t.size();
  const std::size_t t_rank = tgt_axis_of_.size();
  // Odometer over target atomic axes (row-major, last fastest).
  std::vector<std::size_t> coord(t_rank, 0);
  std::vector<std::size_t> tgt_sizes(t_rank), tgt_strides(t_rank);
  for (std::size_t i = 0; i < t_rank; ++i) {
    tgt_sizes[i] = axis_sizes_[tgt_axis_of_[i]];
    tgt_strides[i] = src_stride[tgt_axis_of_[i]];
  }
  std::size_t src = 0;
  const double* in = t.data();
  double* o = out.data();
  for (std::size_t flat = 0; flat < total; ++flat) {
    o[flat] = in[src];
    for (std::size_t i = t_rank; i-- > 0;) {
      src += tgt_strides[i];
      if (++coord[i] < tgt_sizes[i]) break;
      src -= tgt_strides[i] * tgt_sizes[i];
      coord[i] = 0;
    }
  }
  return out;
}

RearrangeSpec RearrangeSpec::inverted() const {
  if (!bound_) throw ValueError("rearrange: cannot invert unbound spec");
  auto arrow = text_.find("->");
  std::string swapped = text_.substr(arrow + 2) + " -> " + text_.substr(0, arrow);
  RearrangeSpec inv = RearrangeSpec::parse(swapped);
  AxisSizes sizes;
  for (std::size_t i = 0; i < axis_names_.size(); ++i) sizes[axis_names_[i]] = axis_sizes_[i];
  inv.bind(target_shape_, sizes);
  return inv;
}

Tensor rearrange(const Tensor& t, const std::string& spec, const AxisSizes& sizes) {
  RearrangeSpec s = RearrangeSpec::parse(spec);
  s.bind(t.shape(), sizes);
  return s.apply(t);
}

// ---------------------------------------------------------------------------
// Mode reductions
// ---------------------------------------------------------------------------

namespace {

// Collapse mode m (1-based): out[outer, inner] over t[outer, i_m, inner].
struct ModeView {
  std::size_t outer, len, inner;
};

ModeView mode_view(const Tensor& t, std::size_t mode) {
  ModeView v{1, t.shape()[mode - 1], 1};
  for (std::size_t i = 0; i + 1 < mode; ++i) v.outer *= t.shape()[i];
  for (std::size_t i = mode; i < t.rank(); ++i) v.inner *= t.shape()[i];
  return v;
}

Shape drop_mode(const Shape& s, std::size_t mode) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != mode - 1) out.push_back(s[i]);
  }
  return out;
}

}  // namespace

Tensor mode_sum(const Tensor& t, std::size_t mode) {
  check_mode(t, mode, "mode_sum");
  auto v = mode_view(t, mode);
  Tensor out(drop_mode(t.shape(), mode));
  const double* in = t.data();
  double* o = out.data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t m = 0; m < v.len; ++m) {
      const double* src = in + (a * v.len + m) * v.inner;
      double* dst = o + a * v.inner;
      for (std::size_t b = 0; b < v.inner; ++b) dst[b] += src[b];
    }
  }
  return out;
}

Tensor mode_mean(const Tensor& t, std::size_t mode) {
  check_mode(t, mode, "mode_mean");
  Tensor out = mode_sum(t, mode);
  const double inv = 1.0 / double(t.shape()[mode - 1]);
  for (auto& x : out.values()) x *= inv;
  return out;
}

Tensor mode_variance(const Tensor& t, std::size_t mode) {
  check_mode(t, mode, "mode_variance");
  auto v = mode_view(t, mode);
  Tensor mean = mode_mean(t, mode);
  Tensor out(drop_mode(t.shape(), mode));
  const double* in = t.data();
  const double* mu = mean.data();
  double* o = out.data();
  for (std::size_t a = 0; a < v.outer; ++a) {
    for (std::size_t m = 0; m < v.len; ++m) {
      const double* src = in + (a * v.len + m) * v.inner;
      for (std::size_t b = 0; b < v.inner; ++b) {
        const double d = src[b] - mu[a * v.inner + b];
        o[a * v.inner + b] += d * d;
      }
    }
  }
  const double inv = 1.0 / double(v.len);
  for (auto& x : out.values()) x *= inv;
  return out;
}

// ---------------------------------------------------------------------------
// top-k selection
// ---------------------------------------------------------------------------

TopKResult top_k_select(const Tensor& source, const Tensor& scores,
                        std::size_t mode, std::size_t k) {
  check_mode(source, mode, "top_k_select");
  if (scores.rank() != source.rank()) {
    throw_shape("top_k_select: score rank " + std::to_string(scores.rank()) +
                " != source rank " + std::to_string(source.rank()));
  }
  for (std::size_t i = 0; i < source.rank(); ++i) {
    const bool is_mode = (i == mode - 1);
    if (scores.shape()[i] != source.shape()[i] && !(scores.shape()[i] == 1 && !is_mode)) {
      throw_shape("top_k_select: scores " + shape_str(scores.shape()) +
                  " incompatible with source " + shape_str(source.shape()));
    }
  }
  const std::size_t len = source.shape()[mode - 1];
  if (k < 1 || k > len) {
    throw ValueError("top_k_select: k=" + std::to_string(k) + " out of range for mode size " +
                     std::to_string(len));
  }

  auto sv = mode_view(scores, mode);
  Shape idx_shape = scores.shape();
  idx_shape[mode - 1] = k;
  std::vector<std::size_t> indices(shape_product(idx_shape));
  Tensor sel_scores(idx_shape);

  // Per-fiber selection over the score tensor; ties keep the lowest index.
  std::vector<std::size_t> order(len);
  for (std::size_t a = 0; a < sv.outer; ++a) {
    for (std::size_t b = 0; b < sv.inner; ++b) {
      std::iota(order.begin(), order.end(), std::size_t(0));
      const double* sc = scores.data();
      auto score_at = [&](std::size_t m) { return sc[(a * sv.len + m) * sv.inner + b]; };
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return score_at(x) > score_at(y);
      });
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t out_pos = (a * k + j) * sv.inner + b;
        indices[out_pos] = order[j];
        sel_scores[out_pos] = score_at(order[j]);
      }
    }
  }

  // Gather from the source, broadcasting the selection over modes where the
  // score tensor is size 1.
  Shape out_shape = source.shape();
  out_shape[mode - 1] = k;
  Tensor sel_source(out_shape);
  auto fv = mode_view(source, mode);
  // Map a source (outer, inner) cell to the score fiber it selects with.
  Shape s_outer_dims, s_inner_dims, f_outer_dims, f_inner_dims;
  for (std::size_t i = 0; i + 1 < mode; ++i) {
    f_outer_dims.push_back(source.shape()[i]);
    s_outer_dims.push_back(scores.shape()[i]);
  }
  for (std::size_t i = mode; i < source.rank(); ++i) {
    f_inner_dims.push_back(source.shape()[i]);
    s_inner_dims.push_back(scores.shape()[i]);
  }
  auto project = [](std::size_t flat, const Shape& dims, const Shape& sdims) {
    // Decode `flat` over dims, re-encode over sdims (broadcast where 1).
    std::size_t res = 0;
    std::size_t rem = flat;
    std::vector<std::size_t> coords(dims.size());
    for (std::size_t i = dims.size(); i-- > 0;) {
      coords[i] = rem % dims[i];
      rem /= dims[i];
    }
    for (std::size_t i = 0; i < sdims.size(); ++i) {
      res = res * sdims[i] + (sdims[i] == 1 ? 0 : coords[i]);
    }
    return res;
  };
  for (std::size_t a = 0; a < fv.outer; ++a) {
    const std::size_t sa = project(a, f_outer_dims, s_outer_dims);
    for (std::size_t b = 0; b < fv.inner; ++b) {
      const std::size_t sb = project(b, f_inner_dims, s_inner_dims);
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t m = indices[(sa * k + j) * sv.inner + sb];
        sel_source[(a * k + j) * fv.inner + b] = source[(a * fv.len + m) * fv.inner + b];
      }
    }
  }
  return TopKResult{std::move(sel_source), std::move(sel_scores), std::move(indices),
                    std::move(idx_shape)};
}

// ---------------------------------------------------------------------------
// batched matmul
// ---------------------------------------------------------------------------

Tensor batched_matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw_shape("batched_matmul: operands must have rank >= 2, got " +
                shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  if (a.rank() != b.rank()) {
    throw_shape("batched_matmul: rank mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  const std::size_t r = a.rank();
  const std::size_t M = a.shape()[r - 2];
  const std::size_t Ka = a.shape()[r - 1];
  const std::size_t b0 = b.shape()[r - 2];
  const std::size_t b1 = b.shape()[r - 1];
  const std::size_t Kb = transpose_b ? b1 : b0;
  const std::size_t N = transpose_b ? b0 : b1;
  if (Ka != Kb) {
    throw_shape("batched_matmul: inner dimensions " + std::to_string(Ka) + " and " +
                std::to_string(Kb) + " differ (" + shape_str(a.shape()) +
                (transpose_b ? " x T(" : " x (") + shape_str(b.shape()) + ")");
  }
  Shape batch(r - 2);
  for (std::size_t i = 0; i + 2 < r; ++i) {
    const std::size_t da = a.shape()[i], db = b.shape()[i];
    if (da != db && da != 1 && db != 1) {
      throw_shape("batched_matmul: batch modes not broadcastable, " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
    }
    batch[i] = std::max(da, db);
  }
  Shape out_shape = batch;
  out_shape.push_back(M);
  out_shape.push_back(N);
  Tensor out(out_shape);

  const std::size_t nbatch = shape_product(batch);
  const std::size_t a_mat = M * Ka;
  const std::size_t b_mat = b0 * b1;
  const std::size_t o_mat = M * N;
  // Per-batch flat offsets with stride 0 on broadcast modes.
  auto offset = [&](const Tensor& t, std::size_t batch_flat) {
    std::size_t rem = batch_flat, off = 0;
    std::vector<std::size_t> coords(batch.size());
    for (std::size_t i = batch.size(); i-- > 0;) {
      coords[i] = rem % batch[i];
      rem /= batch[i];
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t d = t.shape()[i];
      off = off * d + (d == 1 ? 0 : coords[i]);
    }
    return off;
  };
  for (std::size_t n = 0; n < nbatch; ++n) {
    MapConstMat A(a.data() + offset(a, n) * a_mat, (Eigen::Index)M, (Eigen::Index)Ka);
    MapConstMat B(b.data() + offset(b, n) * b_mat, (Eigen::Index)b0, (Eigen::Index)b1);
    MapMat C(out.data() + n * o_mat, (Eigen::Index)M, (Eigen::Index)N);
    if (transpose_b) {
      C.noalias() = A * B.transpose();
    } else {
      C.noalias() = A * B;
    }
  }
  return out;
}

Tensor matmul_last(const Tensor& a, const Tensor& w) {
  if (w.rank() != 2) throw_shape("matmul_last: weight must be a matrix");
  if (a.rank() < 1 || a.shape().back() != w.shape()[0]) {
    throw_shape("matmul_last: " + shape_str(a.shape()) + " x " + shape_str(w.shape()));
  }
  const std::size_t K = w.shape()[0], E = w.shape()[1];
  const std::size_t rows = a.size() / K;
  MapConstMat A(a.data(), (Eigen::Index)rows, (Eigen::Index)K);
  MapConstMat W(w.data(), (Eigen::Index)K, (Eigen::Index)E);
  Shape out_shape = a.shape();
  out_shape.back() = E;
  Tensor out(out_shape);
  MapMat C(out.data(), (Eigen::Index)rows, (Eigen::Index)E);
  C.noalias() = A * W;
  return out;
}

// ---------------------------------------------------------------------------
// concat
// ---------------------------------------------------------------------------

Tensor concat(std::span<const Tensor> ts, std::size_t mode) {
  if (ts.empty()) throw ValueError("concat: no tensors");
  const Tensor& first = ts[0];
  check_mode(first, mode, "concat");
  std::size_t total = 0;
  for (const auto& t : ts) {
    if (t.rank() != first.rank()) throw_shape("concat: rank mismatch");
    for (std::size_t i = 0; i < t.rank(); ++i) {
      if (i != mode - 1 && t.shape()[i] != first.shape()[i]) {
        throw_shape("concat: shapes " + shape_str(first.shape()) + " and " +
                    shape_str(t.shape()) + " differ off mode " + std::to_string(mode));
      }
    }
    total += t.shape()[mode - 1];
  }
  Shape out_shape = first.shape();
  out_shape[mode - 1] = total;
  Tensor out(out_shape);
  auto ov = mode_view(out, mode);
  std::size_t at = 0;
  for (const auto& t : ts) {
    auto tv = mode_view(t, mode);
    for (std::size_t a = 0; a < tv.outer; ++a) {
      const double* src = t.data() + a * tv.len * tv.inner;
      double* dst = out.data() + (a * ov.len + at) * ov.inner;
      std::copy(src, src + tv.len * tv.inner, dst);
    }
    at += t.shape()[mode - 1];
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> ts, std::size_t mode) {
  std::vector<Tensor> v(ts);
  return concat(std::span<const Tensor>(v), mode);
}

// ---------------------------------------------------------------------------
// elementwise helpers
// ---------------------------------------------------------------------------

namespace {

template <class F>
Tensor ew_binary(const Tensor& a, const Tensor& b, F f, const char* op) {
  if (a.rank() == 0 || b.rank() == 0) {
    const Tensor& big = a.rank() == 0 ? b : a;
    const double s = a.rank() == 0 ? a.item() : b.item();
    Tensor out = big;
    for (auto& x : out.values()) x = (a.rank() == 0) ? f(s, x) : f(x, s);
    return out;
  }
  if (a.rank() != b.rank()) {
    throw_shape(std::string(op) + ": rank mismatch " + shape_str(a.shape()) + " vs " +
                shape_str(b.shape()));
  }
  Shape out_shape(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    const std::size_t da = a.shape()[i], db = b.shape()[i];
    if (da != db && da != 1 && db != 1) {
      throw_shape(std::string(op) + ": shapes not broadcastable, " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
    }
    out_shape[i] = std::max(da, db);
  }
  Tensor out(out_shape);
  const std::size_t r = out.rank();
  std::vector<std::size_t> coord(r, 0);
  std::vector<std::size_t> sa(r), sb(r);
  {
    std::size_t pa = 1, pb = 1;
    for (std::size_t i = r; i-- > 0;) {
      sa[i] = (a.shape()[i] == 1) ? 0 : pa;
      sb[i] = (b.shape()[i] == 1) ? 0 : pb;
      pa *= a.shape()[i];
      pb *= b.shape()[i];
    }
  }
  std::size_t ia = 0, ib = 0;
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    po[flat] = f(pa[ia], pb[ib]);
    for (std::size_t i = r; i-- > 0;) {
      ia += sa[i];
      ib += sb[i];
      if (++coord[i] < out.shape()[i]) break;
      ia -= sa[i] * out.shape()[i];
      ib -= sb[i] * out.shape()[i];
      coord[i] = 0;
    }
  }
  return out;
}

}  // namespace

Tensor ew_add(const Tensor& a, const Tensor& b) {
  return ew_binary(a, b, [](double x, double y) { return x + y; }, "ew_add");
}
Tensor ew_sub(const Tensor& a, const Tensor& b) {
  return ew_binary(a, b, [](double x, double y) { return x - y; }, "ew_sub");
}
Tensor ew_mul(const Tensor& a, const Tensor& b) {
  return ew_binary(a, b, [](double x, double y) { return x * y; }, "ew_mul");
}
Tensor ew_div(const Tensor& a, const Tensor& b) {
  return ew_binary(a, b, [](double x, double y) { return x / y; }, "ew_div");
}
Tensor ew_scale(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& x : out.values()) x *= c;
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) {
    throw_shape("max_abs_diff: element counts differ");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_rel_diff(const Tensor& a, const Tensor& b, double floor) {
  if (a.size() != b.size()) {
    throw_shape("max_rel_diff: element counts differ");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    m = std::max(m, std::abs(a[i] - b[i]) / denom);
  }
  return m;
}

}  // namespace weaver
