#include "weaver/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace weaver::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr double kPi2 = 6.283185307179586476925286766559;
constexpr double kRmsEps = 1e-8;
constexpr double kCtcEps = 1e-6;
constexpr double kNormEps = 1e-24;

Tensor uniform_init(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& x : t.values()) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

std::size_t WeaverConfig::pool_k_over_history() const {
  return std::size_t(std::ceil(rho_temporal * double(history)));
}

std::size_t WeaverConfig::pool_k_over_nodes() const {
  return std::size_t(std::ceil(rho_spatial * double(nodes)));
}

void WeaverConfig::validate() const {
  if (history < 1 || horizon < 1 || nodes < 1 || channels < 1) {
    throw ValueError("WeaverConfig: P, Q, N, C must all be at least 1");
  }
  if (embed < 1 || heads < 1 || embed % heads != 0) {
    throw ValueError("WeaverConfig: embed must be a positive multiple of heads");
  }
  if (rho_spatial <= 0.0 || rho_spatial > 1.0 || rho_temporal <= 0.0 || rho_temporal > 1.0) {
    throw ValueError("WeaverConfig: pooling ratios must lie in (0, 1]");
  }
  if (scorers_spatial < 1 || scorers_temporal < 1) {
    throw ValueError("WeaverConfig: need at least one scorer per axis");
  }
  if (dict_landmarks < 1 || dict_width < 1) {
    throw ValueError("WeaverConfig: dictionary sizes must be positive");
  }
  if (spatial_widths.empty()) {
    throw ValueError("WeaverConfig: spatial encoder needs at least one layer width");
  }
  if (mlp_expansion < 1) throw ValueError("WeaverConfig: mlp_expansion must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ValueError("WeaverConfig: dropout must lie in [0, 1)");
  }
}

// ---------------------------------------------------------------------------
// config io (flat key=value text)
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> parse_width_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoul(item));
  }
  return out;
}

std::string width_list_str(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

}  // namespace

WeaverConfig WeaverConfig::from_stream(std::istream& in) {
  WeaverConfig cfg;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ValueError("config: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "history") cfg.history = std::stoul(val);
    else if (key == "horizon") cfg.horizon = std::stoul(val);
    else if (key == "nodes") cfg.nodes = std::stoul(val);
    else if (key == "channels") cfg.channels = std::stoul(val);
    else if (key == "embed") cfg.embed = std::stoul(val);
    else if (key == "heads") cfg.heads = std::stoul(val);
    else if (key == "dict_landmarks") cfg.dict_landmarks = std::stoul(val);
    else if (key == "dict_width") cfg.dict_width = std::stoul(val);
    else if (key == "scorers_spatial") cfg.scorers_spatial = std::stoul(val);
    else if (key == "scorers_temporal") cfg.scorers_temporal = std::stoul(val);
    else if (key == "rho_spatial") cfg.rho_spatial = std::stod(val);
    else if (key == "rho_temporal") cfg.rho_temporal = std::stod(val);
    else if (key == "kern_width") cfg.kern_width = std::stoul(val);
    else if (key == "spatial_widths") cfg.spatial_widths = parse_width_list(val);
    else if (key == "dropout") cfg.dropout = std::stod(val);
    else if (key == "mlp_expansion") cfg.mlp_expansion = std::stoul(val);
    else if (key == "leaky_slope") cfg.leaky_slope = std::stod(val);
    else if (key == "use_time_metadata") cfg.use_time_metadata = (val == "1" || val == "true");
    else throw ValueError("config: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

WeaverConfig WeaverConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValueError("config: cannot open " + path);
  return from_stream(in);
}

void WeaverConfig::to_stream(std::ostream& out) const {
  out << "history=" << history << '\n'
      << "horizon=" << horizon << '\n'
      << "nodes=" << nodes << '\n'
      << "channels=" << channels << '\n'
      << "embed=" << embed << '\n'
      << "heads=" << heads << '\n'
      << "dict_landmarks=" << dict_landmarks << '\n'
      << "dict_width=" << dict_width << '\n'
      << "scorers_spatial=" << scorers_spatial << '\n'
      << "scorers_temporal=" << scorers_temporal << '\n'
      << "rho_spatial=" << rho_spatial << '\n'
      << "rho_temporal=" << rho_temporal << '\n'
      << "kern_width=" << kern_width << '\n'
      << "spatial_widths=" << width_list_str(spatial_widths) << '\n'
      << "dropout=" << dropout << '\n'
      << "mlp_expansion=" << mlp_expansion << '\n'
      << "leaky_slope=" << leaky_slope << '\n'
      << "use_time_metadata=" << (use_time_metadata ? 1 : 0) << '\n';
}

void WeaverConfig::to_file(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw ValueError("config: cannot write " + path);
  to_stream(out);
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

WeaverParameters WeaverParameters::init(const WeaverConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t e = cfg.embed, n = cfg.nodes, p = cfg.history;
  const std::size_t in_width = cfg.channels + cfg.dict_width;
  WeaverParameters w;
  w.dict = phase::PhaseDictionary::init(p, n, cfg.channels, cfg.dict_landmarks,
                                        cfg.dict_width, cfg.dropout, rng);
  w.input_w = uniform_init({in_width, e}, 1.0 / std::sqrt(double(in_width)), rng);
  w.input_glu_w = uniform_init({e, 2 * e}, 1.0 / std::sqrt(double(e)), rng);
  w.scorer_spatial = uniform_init({e, cfg.scorers_spatial}, 1.0 / std::sqrt(double(e)), rng);
  w.scorer_temporal = uniform_init({e, cfg.scorers_temporal}, 1.0 / std::sqrt(double(e)), rng);
  w.kern_bias = Tensor({n, cfg.kern_width});
  for (auto& x : w.kern_bias.values()) x = 0.02 * rng.normal();
  {
    std::size_t prev = e + cfg.kern_width;
    for (std::size_t width : cfg.spatial_widths) {
      w.spatial_stack.push_back(uniform_init({prev, width}, 1.0 / std::sqrt(double(prev)), rng));
      prev = width;
    }
    w.spatial_stack.push_back(uniform_init({prev, e}, 1.0 / std::sqrt(double(prev)), rng));
  }
  {
    const std::size_t t_in = cfg.use_time_metadata ? e + 4 : e;
    w.temporal_w = uniform_init({t_in, e}, 1.0 / std::sqrt(double(t_in)), rng);
  }
  const double eb = 1.0 / std::sqrt(double(e));
  w.q_spatial = uniform_init({e, e}, eb, rng);
  w.k_spatial = uniform_init({e, e}, eb, rng);
  w.q_temporal = uniform_init({e, e}, eb, rng);
  w.k_temporal = uniform_init({e, e}, eb, rng);
  w.headmix_w = uniform_init({e, 2 * e}, eb, rng);
  const std::size_t mze = cfg.mlp_expansion * e;
  w.up_w = uniform_init({e, mze}, eb, rng);
  w.up_b = uniform_init({mze}, eb, rng);
  w.dn_w = uniform_init({mze, e}, 1.0 / std::sqrt(double(mze)), rng);
  w.dn_b = uniform_init({e}, 1.0 / std::sqrt(double(mze)), rng);
  const std::size_t qc = cfg.horizon * cfg.channels;
  w.readout_w = uniform_init({e, qc}, eb, rng);
  w.readout_b = uniform_init({qc}, eb, rng);
  return w;
}

namespace {

template <class P, class T>
std::vector<std::pair<std::string, T*>> entries_impl(P& w) {
  std::vector<std::pair<std::string, T*>> out;
  out.emplace_back("dict.landmarks", &w.dict.landmarks);
  out.emplace_back("dict.query.w", &w.dict.query_w);
  out.emplace_back("dict.query.b", &w.dict.query_b);
  out.emplace_back("dict.tau", &w.dict.tau);
  out.emplace_back("input.w", &w.input_w);
  out.emplace_back("input.glu_w", &w.input_glu_w);
  out.emplace_back("pool.spatial.scorers", &w.scorer_spatial);
  out.emplace_back("pool.temporal.scorers", &w.scorer_temporal);
  out.emplace_back("enc.spatial.kern_bias", &w.kern_bias);
  for (std::size_t i = 0; i < w.spatial_stack.size(); ++i) {
    out.emplace_back("enc.spatial.stack." + std::to_string(i), &w.spatial_stack[i]);
  }
  out.emplace_back("enc.temporal.w", &w.temporal_w);
  out.emplace_back("attn.spatial.q_w", &w.q_spatial);
  out.emplace_back("attn.spatial.k_w", &w.k_spatial);
  out.emplace_back("attn.temporal.q_w", &w.q_temporal);
  out.emplace_back("attn.temporal.k_w", &w.k_temporal);
  out.emplace_back("mix.w", &w.headmix_w);
  out.emplace_back("head.up_w", &w.up_w);
  out.emplace_back("head.up_b", &w.up_b);
  out.emplace_back("head.dn_w", &w.dn_w);
  out.emplace_back("head.dn_b", &w.dn_b);
  out.emplace_back("head.readout_w", &w.readout_w);
  out.emplace_back("head.readout_b", &w.readout_b);
  return out;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> WeaverParameters::entries() {
  return entries_impl<WeaverParameters, Tensor>(*this);
}

std::vector<std::pair<std::string, const Tensor*>> WeaverParameters::entries() const {
  return entries_impl<const WeaverParameters, const Tensor>(*this);
}

std::size_t WeaverParameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries()) n += t->size();
  return n;
}

ParamVars lease(ad::Tape& tape, const WeaverParameters& params, bool requires_grad) {
  ParamVars pv;
  auto mk = [&](const std::string& name, const Tensor& t) {
    ad::Var v = tape.variable(t, requires_grad);
    pv.named.emplace_back(name, v);
    return v;
  };
  pv.dict.landmarks = mk("dict.landmarks", params.dict.landmarks);
  pv.dict.query_w = mk("dict.query.w", params.dict.query_w);
  pv.dict.query_b = mk("dict.query.b", params.dict.query_b);
  pv.dict.tau = mk("dict.tau", params.dict.tau);
  pv.input_w = mk("input.w", params.input_w);
  pv.input_glu_w = mk("input.glu_w", params.input_glu_w);
  pv.scorer_spatial = mk("pool.spatial.scorers", params.scorer_spatial);
  pv.scorer_temporal = mk("pool.temporal.scorers", params.scorer_temporal);
  pv.kern_bias = mk("enc.spatial.kern_bias", params.kern_bias);
  for (std::size_t i = 0; i < params.spatial_stack.size(); ++i) {
    pv.spatial_stack.push_back(
        mk("enc.spatial.stack." + std::to_string(i), params.spatial_stack[i]));
  }
  pv.temporal_w = mk("enc.temporal.w", params.temporal_w);
  pv.q_spatial = mk("attn.spatial.q_w", params.q_spatial);
  pv.k_spatial = mk("attn.spatial.k_w", params.k_spatial);
  pv.q_temporal = mk("attn.temporal.q_w", params.q_temporal);
  pv.k_temporal = mk("attn.temporal.k_w", params.k_temporal);
  pv.headmix_w = mk("mix.w", params.headmix_w);
  pv.up_w = mk("head.up_w", params.up_w);
  pv.up_b = mk("head.up_b", params.up_b);
  pv.dn_w = mk("head.dn_w", params.dn_w);
  pv.dn_b = mk("head.dn_b", params.dn_b);
  pv.readout_w = mk("head.readout_w", params.readout_w);
  pv.readout_b = mk("head.readout_b", params.readout_b);
  return pv;
}

// ---------------------------------------------------------------------------
// forward stages
// ---------------------------------------------------------------------------

Tensor cyclical_encoding(std::span<const double> minute_of_day,
                         std::span<const double> day_of_week) {
  if (minute_of_day.size() != day_of_week.size()) {
    throw ShapeError("cyclical_encoding: span lengths differ");
  }
  const std::size_t p = minute_of_day.size();
  Tensor out({p, 4});
  for (std::size_t i = 0; i < p; ++i) {
    out[i * 4 + 0] = std::sin(kPi2 * minute_of_day[i] / 1440.0);
    out[i * 4 + 1] = std::cos(kPi2 * minute_of_day[i] / 1440.0);
    out[i * 4 + 2] = std::sin(kPi2 * day_of_week[i] / 7.0);
    out[i * 4 + 3] = std::cos(kPi2 * day_of_week[i] / 7.0);
  }
  return out;
}

ad::Var project_input(const ad::Var& x, const ad::Var& cofactors, const ParamVars& pv,
                      const WeaverConfig& cfg, bool training, Rng& rng) {
  if (x.shape() != Shape{cfg.history, cfg.nodes, cfg.channels}) {
    throw ShapeError("project_input: x " + shape_str(x.shape()) + " does not match config");
  }
  ad::Var joined = ad::concat({x, cofactors}, 3);
  ad::Var u_xi = ad::linear(joined, pv.input_w);  // P x N x E
  ad::Var gated = ad::glu(ad::linear(ad::rms_norm(u_xi, kRmsEps), pv.input_glu_w));
  ad::Var u_st = ad::add(ad::dropout(gated, cfg.dropout, training, rng), u_xi);
  return ad::rearrange(u_st, "p n e -> e p n");
}

PoolResult atk_pool(const ad::Var& u_pne, Axis axis, const ParamVars& pv,
                    const WeaverConfig& cfg) {
  const std::size_t pool_mode = (axis == Axis::Spatial) ? 1 : 2;
  const std::size_t len = u_pne.shape()[pool_mode - 1];
  const std::size_t k =
      (axis == Axis::Spatial) ? cfg.pool_k_over_history() : cfg.pool_k_over_nodes();
  if (k < 1 || k > len) throw ValueError("atk_pool: pooled count out of range");
  const ad::Var& scorer_w = (axis == Axis::Spatial) ? pv.scorer_spatial : pv.scorer_temporal;
  const std::size_t n_scorers = scorer_w.shape()[1];
  if (n_scorers < 1) throw ValueError("atk_pool: no scorers");

  // Vector-normalized scorer columns; normalization is part of the graph.
  ad::Var col_sq = ad::mode_sum(ad::mul(scorer_w, scorer_w), 1);
  ad::Var col_norm = ad::sqrt_(ad::add_scalar(col_sq, kNormEps));
  ad::Var w_unit = ad::div(scorer_w, ad::reshape(col_norm, {1, n_scorers}));
  ad::Var gamma = ad::linear(u_pne, w_unit);  // P x N x M

  // Pooling informativeness metric: variance along the pooled mode, summed
  // over the other axis. Scorer choice is discrete, so plain values suffice.
  Tensor pim = mode_sum(mode_variance(gamma.value(), pool_mode), 1);
  std::size_t best = 0;
  for (std::size_t m = 1; m < pim.size(); ++m) {
    if (pim[m] > pim[best]) best = m;  // ties keep the lowest index
  }

  ad::Var scores = ad::slice_mode(gamma, 3, best, 1);  // P x N x 1
  TopKResult sel = top_k_select(scores.value(), scores.value(), pool_mode, k);
  ad::Var top_feats = ad::take_along_mode(u_pne, sel.indices, sel.index_shape, pool_mode);
  ad::Var top_scores = ad::take_along_mode(scores, sel.indices, sel.index_shape, pool_mode);
  ad::Var weights = ad::softmax(top_scores, pool_mode);
  ad::Var pooled = ad::mode_sum(ad::mul(top_feats, weights), pool_mode);
  return PoolResult{pooled, best, sel.indices};
}

ad::Var spatial_encoding(const ad::Var& u_s, const ParamVars& pv, const WeaverConfig& cfg) {
  if (pv.spatial_stack.size() < 2) {
    throw ValueError("spatial_encoding: width chain needs at least two maps");
  }
  ad::Var a = ad::concat({u_s, pv.kern_bias}, 2);  // N x (E + D_kern)
  for (std::size_t l = 0; l + 1 < pv.spatial_stack.size(); ++l) {
    a = ad::relu(ad::linear(a, pv.spatial_stack[l]));
  }
  (void)cfg;
  return ad::linear(a, pv.spatial_stack.back());
}

ad::Var temporal_encoding(const ad::Var& u_t, const std::optional<Tensor>& b_dyn,
                          const ParamVars& pv, const WeaverConfig& cfg) {
  if (!cfg.use_time_metadata) {
    return ad::linear(u_t, pv.temporal_w);
  }
  if (!b_dyn) throw ValueError("temporal_encoding: timestamps required with time metadata");
  if (b_dyn->shape() != Shape{cfg.history, 4}) {
    throw ShapeError("temporal_encoding: b_dyn must be P x 4");
  }
  ad::Tape& tape = *u_t.tape();
  ad::Var joined = ad::concat({u_t, tape.constant(*b_dyn)}, 2);
  return ad::linear(joined, pv.temporal_w);
}

ad::Var local_attention(const ad::Var& g, Axis axis, const ParamVars& pv,
                        const WeaverConfig& cfg) {
  if (cfg.embed % cfg.heads != 0) {
    throw ValueError("local_attention: embed not divisible by head count");
  }
  const ad::Var& wq = (axis == Axis::Spatial) ? pv.q_spatial : pv.q_temporal;
  const ad::Var& wk = (axis == Axis::Spatial) ? pv.k_spatial : pv.k_temporal;
  ad::Var q = ad::rearrange(ad::linear(g, wq), "n (h d) -> h n d", {{"h", cfg.heads}});
  ad::Var k = ad::rearrange(ad::linear(g, wk), "n (h d) -> h n d", {{"h", cfg.heads}});
  return attn::ctc(q, k, kCtcEps);
}

ad::Var st_kronecker_layer(const ad::Var& u_epn, const ad::Var& theta_s,
                           const ad::Var& theta_t, const ParamVars& pv,
                           const WeaverConfig& cfg, bool training, Rng& rng) {
  const std::size_t h = cfg.heads, dh = cfg.head_dim(), p = cfg.history, n = cfg.nodes;
  if (theta_s.shape() != Shape{h, n, n} || theta_t.shape() != Shape{h, p, p}) {
    throw ShapeError("st_kronecker_layer: factor shapes must be HxNxN and HxPxP");
  }
  // Multihead (R)-P^2-KMV: batched matmuls alternating with Kronecker-Tumbles.
  ad::Var v3 = ad::rearrange(u_epn, "(h d) p n -> h (d p) n", {{"h", h}});
  ad::Var u2 = ad::matmul(v3, theta_s, /*transpose_b=*/true);
  ad::Var u2t = ad::rearrange(u2, "h (d p) n -> h (d n) p", {{"d", dh}});
  ad::Var u1 = ad::matmul(u2t, theta_t, /*transpose_b=*/true);
  ad::Var z_h = ad::rearrange(u1, "h (d n) p -> h (p n) d", {{"d", dh}});
  // Head consolidation: the mixing weight acts as a weighted implicit KPS.
  (void)training;
  (void)rng;
  ad::Var z_mixed = ad::rearrange(z_h, "h (p n) d -> p n (h d)", {{"p", p}});
  ad::Var gated = ad::glu(ad::linear(z_mixed, pv.headmix_w));
  ad::Var residual = ad::rearrange(u_epn, "e p n -> p n e");
  return ad::add(gated, residual);
}

ad::Var forecast_head(const ad::Var& z_pne, const ParamVars& pv, const WeaverConfig& cfg,
                      bool training, Rng& rng) {
  ad::Var up = ad::add_bias(ad::linear(z_pne, pv.up_w), pv.up_b);
  ad::Var hidden = ad::dropout(ad::leaky_relu(up, cfg.leaky_slope), cfg.dropout, training, rng);
  ad::Var z1 = ad::add(ad::add_bias(ad::linear(hidden, pv.dn_w), pv.dn_b), z_pne);
  // Readout consumes the final history step.
  ad::Var last = ad::reshape(ad::slice_mode(z1, 1, cfg.history - 1, 1),
                             {cfg.nodes, cfg.embed});
  ad::Var flat = ad::add_bias(ad::linear(last, pv.readout_w), pv.readout_b);
  return ad::rearrange(flat, "n (q c) -> q n c", {{"q", cfg.horizon}});
}

namespace {

template <class F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ShapeError& e) {
    throw ShapeError(std::string("weaver_forward/") + name + ": " + e.what());
  } catch (const ValueError& e) {
    throw ValueError(std::string("weaver_forward/") + name + ": " + e.what());
  }
}

}  // namespace

ad::Var weaver_forward(ad::Tape& tape, const Tensor& x, const std::optional<Tensor>& b_dyn,
                       const ParamVars& pv, const WeaverConfig& cfg, bool training,
                       Rng& rng) {
  cfg.validate();
  if (x.shape() != Shape{cfg.history, cfg.nodes, cfg.channels}) {
    throw ShapeError("weaver_forward: input " + shape_str(x.shape()) +
                     " does not match the config");
  }
  phase::PhaseDictionary dcfg;
  dcfg.history = cfg.history;
  dcfg.channels = cfg.channels;
  dcfg.nodes = cfg.nodes;
  dcfg.landmark_count = cfg.dict_landmarks;
  dcfg.cofactor_width = cfg.dict_width;
  dcfg.dropout = cfg.dropout;
  dcfg.landmarks = pv.dict.landmarks.value();
  dcfg.query_w = pv.dict.query_w.value();
  dcfg.query_b = pv.dict.query_b.value();
  dcfg.tau = pv.dict.tau.value();

  ad::Var xv = tape.constant(x);
  ad::Var cof = stage("retrieve_cofactors", [&] {
    return phase::retrieve_cofactors(xv, pv.dict, dcfg, training, rng);
  });
  ad::Var u_epn = stage("project_input", [&] {
    return project_input(xv, cof, pv, cfg, training, rng);
  });
  ad::Var u_pne = ad::rearrange(u_epn, "e p n -> p n e");
  ad::Var u_s = stage("atk_pool[spatial]", [&] {
    return atk_pool(u_pne, Axis::Spatial, pv, cfg).pooled;
  });
  ad::Var u_t = stage("atk_pool[temporal]", [&] {
    return atk_pool(u_pne, Axis::Temporal, pv, cfg).pooled;
  });
  ad::Var g_s = stage("spatial_encoding", [&] { return spatial_encoding(u_s, pv, cfg); });
  ad::Var g_t = stage("temporal_encoding", [&] {
    return temporal_encoding(u_t, b_dyn, pv, cfg);
  });
  ad::Var theta_s = stage("local_attention[spatial]", [&] {
    return local_attention(g_s, Axis::Spatial, pv, cfg);
  });
  ad::Var theta_t = stage("local_attention[temporal]", [&] {
    return local_attention(g_t, Axis::Temporal, pv, cfg);
  });
  ad::Var z = stage("st_kronecker_layer", [&] {
    return st_kronecker_layer(u_epn, theta_s, theta_t, pv, cfg, training, rng);
  });
  return stage("forecast_head", [&] { return forecast_head(z, pv, cfg, training, rng); });
}

Tensor weaver_forward(const Tensor& x, const std::optional<Tensor>& b_dyn,
                      const WeaverParameters& params, const WeaverConfig& cfg) {
  ad::Tape tape;
  ParamVars pv = lease(tape, params, /*requires_grad=*/false);
  Rng rng(0);
  return weaver_forward(tape, x, b_dyn, pv, cfg, /*training=*/false, rng).value();
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

ad::Var mae_loss(const ad::Var& y_hat, const Tensor& y, const Tensor* mask) {
  if (y_hat.shape() != y.shape()) {
    throw ShapeError("mae_loss: prediction " + shape_str(y_hat.shape()) +
                     " vs target " + shape_str(y.shape()));
  }
  ad::Tape& tape = *y_hat.tape();
  ad::Var err = ad::abs_(ad::sub(y_hat, tape.constant(y)));
  double count = double(y.size());
  if (mask != nullptr) {
    if (mask->shape() != y.shape()) throw ShapeError("mae_loss: mask shape mismatch");
    count = 0.0;
    for (double m : mask->values()) count += (m != 0.0) ? 1.0 : 0.0;
    if (count == 0.0) throw ValueError("mae_loss: mask has no observed entries");
    err = ad::mul(err, tape.constant(*mask));
  }
  return ad::scale(ad::sum_all(err), 1.0 / count);
}

double mae_loss(const Tensor& y_hat, const Tensor& y, const Tensor* mask) {
  if (y_hat.shape() != y.shape()) {
    throw ShapeError("mae_loss: prediction " + shape_str(y_hat.shape()) +
                     " vs target " + shape_str(y.shape()));
  }
  double total = 0.0, count = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double m = mask ? (*mask)[i] : 1.0;
    if (m != 0.0) {
      total += std::abs(y_hat[i] - y[i]);
      count += 1.0;
    }
  }
  if (count == 0.0) throw ValueError("mae_loss: mask has no observed entries");
  return total / count;
}

// ---------------------------------------------------------------------------
// checkpoint io
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "weaver-checkpoint v1";

template <class T>
void write_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValueError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const WeaverConfig& cfg,
                     const WeaverParameters& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValueError("checkpoint: cannot write " + path);
  out << kCheckpointMagic << '\n';
  cfg.to_stream(out);
  const auto entries = params.entries();
  out << "tensors " << entries.size() << '\n';
  for (const auto& [name, t] : entries) {
    write_raw<std::uint32_t>(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    write_raw<std::uint32_t>(out, std::uint32_t(t->rank()));
    for (auto d : t->shape()) write_raw<std::uint64_t>(out, std::uint64_t(d));
    out.write(reinterpret_cast<const char*>(t->data()),
              std::streamsize(t->size() * sizeof(double)));
  }
  if (!out) throw ValueError("checkpoint: write failed for " + path);
}

std::pair<WeaverConfig, WeaverParameters> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValueError("checkpoint: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw ValueError("checkpoint: bad magic in " + path);
  }
  std::stringstream cfg_text;
  std::size_t tensor_count = 0;
  while (std::getline(in, line)) {
    if (line.rfind("tensors ", 0) == 0) {
      tensor_count = std::stoul(line.substr(8));
      break;
    }
    cfg_text << line << '\n';
  }
  WeaverConfig cfg = WeaverConfig::from_stream(cfg_text);
  Rng rng(0);
  WeaverParameters params = WeaverParameters::init(cfg, rng);
  auto entries = params.entries();
  std::size_t loaded = 0;
  for (std::size_t i = 0; i < tensor_count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rank = read_raw<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = std::size_t(read_raw<std::uint64_t>(in));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(double)));
    if (!in) throw ValueError("checkpoint: truncated tensor data in " + path);
    auto it = std::find_if(entries.begin(), entries.end(),
                           [&](const auto& e) { return e.first == name; });
    if (it == entries.end()) throw ValueError("checkpoint: unknown tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw ShapeError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) +
                       ", expected " + shape_str(it->second->shape()));
    }
    *it->second = std::move(t);
    ++loaded;
  }
  if (loaded != entries.size()) {
    throw ValueError("checkpoint: expected " + std::to_string(entries.size()) +
                     " tensors, found " + std::to_string(loaded));
  }
  return {cfg, std::move(params)};
}

}  // namespace weaver::model
