#pragma once

#include <span>
#include <vector>

#include "weaver/autodiff.hpp"
#include "weaver/tensor.hpp"

namespace weaver::attn {

/// Multihead routing vectors: queries H x R x d_head, keys H x S x d_head.
struct QueryKeyBatch {
  Tensor q;
  Tensor k;
  double eps0 = 1e-6;
};

/// Continuous Tanimoto coefficient, <q,k> / (|q|^2 + |k|^2 - <q,k> + eps0).
/// Entries lie in [-1/3, 1] up to the eps0 perturbation.
Tensor ctc(const QueryKeyBatch& qk);

/// Scaled dot-product attention with softmax row normalization
/// (max-subtraction stabilized). Rows sum to 1.
Tensor sdpa_softmax(const QueryKeyBatch& qk);

/// Cosine coefficient, <q,k> / (|q| |k| + eps0).
Tensor cosine(const QueryKeyBatch& qk);

/// Entmax-1.5 over a logit vector: p_i = relu(x_i / (2 tau) - gamma)^2 with
/// the threshold gamma solved by the exact sort-based procedure so that the
/// output lies on the simplex. Support may be a strict subset.
std::vector<double> entmax15(std::span<const double> logits, double temperature = 1.0);

/// Row-wise Entmax-1.5 over the last mode. `temperature` is a scalar or a
/// tensor holding one positive temperature per row fiber.
Tensor entmax15_rows(const Tensor& logits, const Tensor& temperature);
Tensor entmax15_rows(const Tensor& logits, double temperature = 1.0);

// Differentiable forms used by the model. The CTC form composes tape
// primitives; entmax records a primitive with its closed-form Jacobian.
ad::Var ctc(const ad::Var& q, const ad::Var& k, double eps0 = 1e-6);
ad::Var entmax15_rows(const ad::Var& logits);

}  // namespace weaver::attn
