#include "weaver/dictionary.hpp"

#include <cmath>

namespace weaver::phase {

PhaseDictionary PhaseDictionary::init(std::size_t history, std::size_t nodes,
                                      std::size_t channels, std::size_t landmark_count,
                                      std::size_t cofactor_width, double dropout,
                                      Rng& rng) {
  PhaseDictionary d;
  d.history = history;
  d.channels = channels;
  d.nodes = nodes;
  d.landmark_count = landmark_count;
  d.cofactor_width = cofactor_width;
  d.dropout = dropout;

  const double land_bound = 1.0 / std::sqrt(double(history * cofactor_width));
  d.landmarks = Tensor({landmark_count, history * cofactor_width});
  for (auto& x : d.landmarks.values()) x = rng.uniform(-land_bound, land_bound);

  const double q_bound = 1.0 / std::sqrt(double(history * channels));
  d.query_w = Tensor({history * channels, 2 * landmark_count});
  for (auto& x : d.query_w.values()) x = rng.uniform(-q_bound, q_bound);
  d.query_b = Tensor({2 * landmark_count});
  for (auto& x : d.query_b.values()) x = rng.uniform(-q_bound, q_bound);

  // softplus^-1(1) = log(e - 1)
  d.tau = Tensor::full({nodes, 1}, std::log(std::exp(1.0) - 1.0));
  return d;
}

void PhaseDictionary::validate() const {
  if (landmarks.shape() != Shape{landmark_count, history * cofactor_width} ||
      query_w.shape() != Shape{history * channels, 2 * landmark_count} ||
      query_b.shape() != Shape{2 * landmark_count} || tau.shape() != Shape{nodes, 1}) {
    throw ShapeError("PhaseDictionary: inconsistent parameter shapes");
  }
}

ad::Var retrieve_cofactors(const ad::Var& x, const PhaseDictionaryVars& vars,
                           const PhaseDictionary& dict, bool training, Rng& rng) {
  dict.validate();
  if (x.rank() != 3 || x.shape()[0] != dict.history || x.shape()[2] != dict.channels) {
    throw ShapeError("retrieve_cofactors: input " + shape_str(x.shape()) +
                     " does not match dictionary P=" + std::to_string(dict.history) +
                     ", C=" + std::to_string(dict.channels));
  }
  if (x.shape()[1] != dict.nodes) {
    throw ShapeError("retrieve_cofactors: node count " + std::to_string(x.shape()[1]) +
                     " does not match the dictionary temperatures");
  }
  const std::size_t n = dict.nodes, m = dict.landmark_count;
  ad::Var xt = ad::rearrange(x, "p n c -> n (p c)");
  ad::Var queries = ad::glu(ad::add_bias(ad::linear(xt, vars.query_w), vars.query_b));
  queries = ad::dropout(queries, dict.dropout, training, rng);
  ad::Var temp = ad::softplus(vars.tau);                       // N x 1
  ad::Var logits = ad::div(queries, temp);                     // broadcast over M
  ad::Var weights = attn::entmax15_rows(logits);               // N x M, simplex rows
  (void)m;
  ad::Var mixed = ad::matmul(ad::reshape(weights, {1, n, m}),
                             ad::reshape(vars.landmarks, {1, m, dict.history * dict.cofactor_width}));
  mixed = ad::reshape(mixed, {n, dict.history * dict.cofactor_width});
  return ad::rearrange(mixed, "n (p k) -> p n k", {{"p", dict.history}});
}

Tensor retrieve_cofactors(const Tensor& x, const PhaseDictionary& dict, bool training,
                          Rng& rng) {
  ad::Tape tape;
  PhaseDictionaryVars vars{tape.constant(dict.landmarks), tape.constant(dict.query_w),
                           tape.constant(dict.query_b), tape.constant(dict.tau)};
  return retrieve_cofactors(tape.constant(x), vars, dict, training, rng).value();
}

Tensor retrieve_cofactors(const Tensor& x, const PhaseDictionary& dict) {
  Rng rng(0);
  return retrieve_cofactors(x, dict, /*training=*/false, rng);
}

Tensor retrieval_weights(const Tensor& x, const PhaseDictionary& dict) {
  dict.validate();
  Tensor xt = rearrange(x, "p n c -> n (p c)");
  Tensor pre = matmul_last(xt, dict.query_w);
  for (std::size_t i = 0; i < pre.size(); ++i) pre[i] += dict.query_b[i % dict.query_b.size()];
  // GLU over the last mode.
  const std::size_t n = dict.nodes, m = dict.landmark_count;
  Tensor gated({n, m});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < m; ++j) {
      const double sig = pre[r * 2 * m + j];
      const double gate = pre[r * 2 * m + m + j];
      gated[r * m + j] = sig / (1.0 + std::exp(-gate));
    }
  }
  Tensor temp({n, 1});
  for (std::size_t r = 0; r < n; ++r) {
    const double t = dict.tau[r];
    temp[r] = t > 30.0 ? t : std::log1p(std::exp(t));
  }
  return attn::entmax15_rows(gated, temp);
}

}  // namespace weaver::phase
