#pragma once

#include "weaver/attention.hpp"
#include "weaver/autodiff.hpp"
#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

namespace weaver::phase {

/// Traffic phase dictionary: a learned landmark matrix queried by sparse
/// Entmax retrieval weights, with node-local temperatures.
struct PhaseDictionary {
  Tensor landmarks;  // M x (P*K)
  Tensor query_w;    // (P*C) x 2M, feeds a GLU
  Tensor query_b;    // 2M
  Tensor tau;        // N x 1, pre-softplus
  double dropout = 0.1;

  std::size_t history = 0;    // P
  std::size_t channels = 0;   // C
  std::size_t nodes = 0;      // N
  std::size_t landmark_count = 0;  // M
  std::size_t cofactor_width = 0;  // K

  /// Landmarks uniform in +-1/sqrt(P*K); temperatures at softplus^-1(1)
  /// so retrieval starts at temperature 1.
  static PhaseDictionary init(std::size_t history, std::size_t nodes,
                              std::size_t channels, std::size_t landmark_count,
                              std::size_t cofactor_width, double dropout, Rng& rng);

  void validate() const;
};

struct PhaseDictionaryVars {
  ad::Var landmarks, query_w, query_b, tau;
};

/// Latent cofactors for every spatiotemporal node, via sparse dictionary
/// lookup: rearrange(Entmax_1.5(Dropout(GLU(X W + b)) / Softplus(tau)) C).
/// x is P x N x C; the result is P x N x K. Per-node retrieval weights lie
/// on the simplex.
ad::Var retrieve_cofactors(const ad::Var& x, const PhaseDictionaryVars& vars,
                           const PhaseDictionary& dict, bool training, Rng& rng);

/// Eval-mode (or training-mode) retrieval on plain tensors.
Tensor retrieve_cofactors(const Tensor& x, const PhaseDictionary& dict,
                          bool training, Rng& rng);
Tensor retrieve_cofactors(const Tensor& x, const PhaseDictionary& dict);

/// The simplex retrieval weights alone (N x M), eval mode. Exposed for
/// inspection and tests.
Tensor retrieval_weights(const Tensor& x, const PhaseDictionary& dict);

}  // namespace weaver::phase
