#pragma once

#include <cstddef>
#include <vector>

#include "weaver/tensor.hpp"

namespace weaver::kron {

/// Dense Kronecker product of two matrices: block matrix a_ij * B.
Tensor kron_dense(const Tensor& a, const Tensor& b);

/// (theta_t kron theta_s) v evaluated as Vec(theta_s Vec^-1(v) theta_t^T).
/// theta_t is PxP, theta_s is NxN, v has length P*N with spatial index
/// fastest (flat index t*N + s).
Tensor kmv_reference(const Tensor& theta_t, const Tensor& theta_s, const Tensor& v);

/// Ordered attention factors Theta_1 ... Theta_Delta, node-sets ordered by
/// decreasing abstraction. Factors are square along their last two modes and
/// share an optional leading head mode; single-head is stored as H=1.
class FactorChain {
 public:
  explicit FactorChain(std::vector<Tensor> factors);

  std::size_t order() const { return sizes_.size(); }        // Delta
  std::size_t heads() const { return heads_; }
  bool has_head_mode() const { return had_head_mode_; }
  std::size_t size(std::size_t delta) const;                 // 1-based
  const Tensor& factor(std::size_t delta) const;             // H x I x I
  const std::vector<std::size_t>& sizes() const { return sizes_; }

 private:
  std::vector<Tensor> factors_;   // normalized to H x I x I
  std::vector<std::size_t> sizes_;
  std::size_t heads_ = 1;
  bool had_head_mode_ = false;
};

/// Value tensor at a declared KMV-vectorization depth. The canonical layout
/// at depth d is H x [prod_{a<=d-1} I_a] x [prod_{delta>=d+1} I_delta] x I_d,
/// with I_0 = E (feature width) and the implicit identity factor
/// I_{Delta+1} = 1. Rearrangements between depths are bijections, so the
/// scalar count never changes.
struct KmvOperand {
  Tensor value;                      // H x front x rest x last
  std::vector<std::size_t> chain;    // I_1 .. I_Delta
  std::size_t features = 1;          // E = I_0
  std::size_t heads = 1;
  std::size_t depth = 0;

  /// Expected canonical shape at the current depth.
  Shape expected_shape() const;
  void check() const;
};

/// Folds a natural-layout tensor (H x) E x I_1 x ... x I_Delta into the
/// depth-(Delta+1) operand. Pure reshape.
KmvOperand fold_operand(Tensor natural, std::vector<std::size_t> chain,
                        std::size_t heads = 1);

/// Kronecker-Tumble: depth <d+1> -> depth <d>. Pure reindexing.
KmvOperand kron_tumble(const KmvOperand& u);
KmvOperand kron_tumble(KmvOperand&& u);

/// Basic P^2-KMV: E-stratified KMV-vectorization. v is (H x) E x P x N with
/// slice e holding the row-major fold of column e. Returns (H x) P*N x E.
Tensor p2kmv_basic(const FactorChain& factors, const Tensor& v);

/// Right-handed P^Delta-KMV: alternating batched matmuls and Kronecker-
/// Tumbles. Equals the dense (Theta_1 kron ... kron Theta_Delta) V applied
/// per feature column. Returns (H x) prod(I) x E.
Tensor pkmv_efficient(const FactorChain& factors, const Tensor& v_natural);
Tensor pkmv_efficient(const FactorChain& factors, KmvOperand v);

/// Head-mixing matrix W_O whose application to head-concatenated outputs
/// equals the explicit per-head weighted Kronecker product summation.
/// Takes H matrices of identical shape E x C and stacks their rows.
Tensor wikps_expand(const std::vector<Tensor>& per_head_weights);

/// Edge structure of the Kronecker graph product of binary adjacencies.
/// Spatiotemporal node (sigma, tau) flattens to tau*N + sigma.
class KronGraphEdges {
 public:
  KronGraphEdges(Tensor a_t, Tensor a_s);

  bool edge(std::size_t sigma1, std::size_t tau1, std::size_t sigma2,
            std::size_t tau2) const;
  /// Dense 0/1 matrix over flattened node pairs; equals the nonzero pattern
  /// of kron_dense(a_t, a_s).
  Tensor dense() const;

  std::size_t spatial_nodes() const { return n_; }
  std::size_t temporal_nodes() const { return p_; }

 private:
  Tensor a_t_, a_s_;
  std::size_t p_ = 0, n_ = 0;
};

namespace testing {
/// Test fixture: perturbs the first output scalar of pkmv_efficient so the
/// verify suites can demonstrate a red equivalence gate. Zero disables.
void set_efficient_perturbation(double eps);
double efficient_perturbation();
}  // namespace testing

}  // namespace weaver::kron
