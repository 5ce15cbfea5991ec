#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "weaver/autodiff.hpp"
#include "weaver/dictionary.hpp"
#include "weaver/rng.hpp"
#include "weaver/tensor.hpp"

namespace weaver::model {

struct WeaverConfig {
  std::size_t history = 12;   // P
  std::size_t horizon = 12;   // Q
  std::size_t nodes = 1;      // N
  std::size_t channels = 1;   // C
  std::size_t embed = 32;     // E = H * d_head
  std::size_t heads = 4;      // H
  std::size_t dict_landmarks = 16;  // M_xi
  std::size_t dict_width = 8;       // K_xi
  std::size_t scorers_spatial = 3;
  std::size_t scorers_temporal = 3;
  double rho_spatial = 0.6;   // pooling ratio over N (temporal axis pooling)
  double rho_temporal = 0.6;  // pooling ratio over P (spatial axis pooling)
  std::size_t kern_width = 8;              // D_kern
  std::vector<std::size_t> spatial_widths = {32};  // D_1..D_kappa
  double dropout = 0.1;
  std::size_t mlp_expansion = 2;  // M_z
  double leaky_slope = 0.01;
  bool use_time_metadata = true;

  std::size_t head_dim() const { return embed / heads; }
  std::size_t pool_k_over_history() const;  // ceil(rho_temporal * P)
  std::size_t pool_k_over_nodes() const;    // ceil(rho_spatial * N)
  void validate() const;

  static WeaverConfig from_stream(std::istream& in);
  static WeaverConfig from_file(const std::string& path);
  void to_stream(std::ostream& out) const;
  void to_file(const std::string& path) const;
};

/// Every learnable tensor of the model, addressable by hierarchical name.
struct WeaverParameters {
  phase::PhaseDictionary dict;
  Tensor input_w;          // (C+K) x E
  Tensor input_glu_w;      // E x 2E
  Tensor scorer_spatial;   // E x M (pooling over P)
  Tensor scorer_temporal;  // E x M (pooling over N)
  Tensor kern_bias;        // N x D_kern
  std::vector<Tensor> spatial_stack;  // W_0 .. W_kappa
  Tensor temporal_w;       // (E+4) x E, or E x E without time metadata
  Tensor q_spatial, k_spatial;    // E x E
  Tensor q_temporal, k_temporal;  // E x E
  Tensor headmix_w;        // E x 2E
  Tensor up_w, up_b, dn_w, dn_b;      // forecast MLP
  Tensor readout_w, readout_b;        // E x QC, QC

  static WeaverParameters init(const WeaverConfig& cfg, Rng& rng);

  std::vector<std::pair<std::string, Tensor*>> entries();
  std::vector<std::pair<std::string, const Tensor*>> entries() const;
  std::size_t scalar_count() const;
};

/// Parameters leased onto a tape for one forward/backward pass.
struct ParamVars {
  phase::PhaseDictionaryVars dict;
  ad::Var input_w, input_glu_w;
  ad::Var scorer_spatial, scorer_temporal;
  ad::Var kern_bias;
  std::vector<ad::Var> spatial_stack;
  ad::Var temporal_w;
  ad::Var q_spatial, k_spatial, q_temporal, k_temporal;
  ad::Var headmix_w;
  ad::Var up_w, up_b, dn_w, dn_b;
  ad::Var readout_w, readout_b;
  std::vector<std::pair<std::string, ad::Var>> named;
};

ParamVars lease(ad::Tape& tape, const WeaverParameters& params, bool requires_grad = true);

/// Cyclical time features, one row [sin,cos](TOD/1440) || [sin,cos](DOW/7)
/// per history step. minute_of_day in [0,1439], day_of_week in [1,7].
Tensor cyclical_encoding(std::span<const double> minute_of_day,
                         std::span<const double> day_of_week);

enum class Axis { Spatial, Temporal };

struct PoolResult {
  ad::Var pooled;             // N x E (spatial) or P x E (temporal)
  std::size_t scorer = 0;     // selected by the informativeness metric
  std::vector<std::size_t> selected;  // gathered indices, scores layout
};

// Stages of the forward pass. `u` shapes follow the pipeline:
// project_input yields E x P x N; pooling and encodings consume the
// P x N x E arrangement.
ad::Var project_input(const ad::Var& x, const ad::Var& cofactors, const ParamVars& pv,
                      const WeaverConfig& cfg, bool training, Rng& rng);
PoolResult atk_pool(const ad::Var& u_pne, Axis axis, const ParamVars& pv,
                    const WeaverConfig& cfg);
ad::Var spatial_encoding(const ad::Var& u_s, const ParamVars& pv, const WeaverConfig& cfg);
ad::Var temporal_encoding(const ad::Var& u_t, const std::optional<Tensor>& b_dyn,
                          const ParamVars& pv, const WeaverConfig& cfg);
ad::Var local_attention(const ad::Var& g, Axis axis, const ParamVars& pv,
                        const WeaverConfig& cfg);
ad::Var st_kronecker_layer(const ad::Var& u_epn, const ad::Var& theta_s,
                           const ad::Var& theta_t, const ParamVars& pv,
                           const WeaverConfig& cfg, bool training, Rng& rng);
ad::Var forecast_head(const ad::Var& z_pne, const ParamVars& pv, const WeaverConfig& cfg,
                      bool training, Rng& rng);

/// Full forward pass on standardized input x (P x N x C). With
/// use_time_metadata the caller supplies b_dyn = cyclical_encoding(...).
ad::Var weaver_forward(ad::Tape& tape, const Tensor& x, const std::optional<Tensor>& b_dyn,
                       const ParamVars& pv, const WeaverConfig& cfg, bool training,
                       Rng& rng);

/// Eval-mode convenience on plain tensors.
Tensor weaver_forward(const Tensor& x, const std::optional<Tensor>& b_dyn,
                      const WeaverParameters& params, const WeaverConfig& cfg);

/// Mean absolute error over unmasked entries (mask optional).
ad::Var mae_loss(const ad::Var& y_hat, const Tensor& y, const Tensor* mask = nullptr);
double mae_loss(const Tensor& y_hat, const Tensor& y, const Tensor* mask = nullptr);

// Checkpoint container: text header (format line + config key=value), then
// named tensors with shapes as little-endian doubles.
void save_checkpoint(const std::string& path, const WeaverConfig& cfg,
                     const WeaverParameters& params);
std::pair<WeaverConfig, WeaverParameters> load_checkpoint(const std::string& path);

}  // namespace weaver::model
