#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "oracles.hpp"
#include "weaver/attention.hpp"
#include "weaver/kron.hpp"
#include "weaver/model.hpp"
#include "weaver/verify.hpp"

using namespace weaver;
using oracles::random_tensor;

namespace {

model::WeaverConfig desk(bool use_time = true) { return verify::desk_config(use_time); }

Tensor time_features(std::size_t p) {
  std::vector<double> minutes, dows;
  for (std::size_t i = 0; i < p; ++i) {
    minutes.push_back(double(480 + 5 * i));
    dows.push_back(2.0);
  }
  return model::cyclical_encoding(minutes, dows);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("cyclical encoding hits the quarter and full cycle points") {
  std::vector<double> minutes = {0.0, 360.0};
  std::vector<double> dows = {7.0, 7.0};
  Tensor b = model::cyclical_encoding(minutes, dows);
  CHECK(b.at({0, 0}) == doctest::Approx(0.0).epsilon(1e-12));  // sin(0)
  CHECK(b.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-12));  // cos(0)
  CHECK(b.at({1, 0}) == doctest::Approx(1.0).epsilon(1e-12));  // sin(pi/2)
  CHECK(std::abs(b.at({1, 1})) < 1e-12);                       // cos(pi/2)
  // Full weekly cycle: dow = 7 lands back on [0, 1].
  CHECK(std::abs(b.at({0, 2})) < 1e-9);
  CHECK(b.at({0, 3}) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("project_input keeps the residual when the GLU branch is zero") {
  auto cfg = desk();
  Rng rng(71);
  auto params = model::WeaverParameters::init(cfg, rng);
  for (auto& x : params.input_glu_w.values()) x = 0.0;
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor cof = random_tensor({cfg.history, cfg.nodes, cfg.dict_width}, rng);

  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  Rng drop(0);
  Tensor out = model::project_input(tape.constant(x), tape.constant(cof), pv, cfg, false,
                                    drop)
                   .value();
  Tensor joined = concat({x, cof}, 3);
  Tensor u_xi = matmul_last(joined, params.input_w);
  Tensor expect = rearrange(u_xi, "p n e -> e p n");
  CHECK(max_abs_diff(out, expect) <= 1e-15);
}

TEST_CASE("project_input with identity map embeds the padded input") {
  auto cfg = desk();
  cfg.dict_width = cfg.embed - cfg.channels;  // C + K = E
  Rng rng(72);
  auto params = model::WeaverParameters::init(cfg, rng);
  params.input_w = Tensor::eye(cfg.embed);
  for (auto& x : params.input_glu_w.values()) x = 0.0;
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor cof(Shape{cfg.history, cfg.nodes, cfg.dict_width});

  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  Rng drop(0);
  Tensor out = model::project_input(tape.constant(x), tape.constant(cof), pv, cfg, false,
                                    drop)
                   .value();
  for (std::size_t t = 0; t < cfg.history; ++t) {
    for (std::size_t n = 0; n < cfg.nodes; ++n) {
      CHECK(out.at({0, t, n}) == x.at({t, n, 0}));
      for (std::size_t e = cfg.channels; e < cfg.embed; ++e) {
        CHECK(out.at({e, t, n}) == 0.0);
      }
    }
  }
}

TEST_CASE("project_input matches a straight-line oracle") {
  auto cfg = desk();
  Rng rng(73);
  auto params = model::WeaverParameters::init(cfg, rng);
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor cof = random_tensor({cfg.history, cfg.nodes, cfg.dict_width}, rng);

  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  Rng drop(0);
  Tensor out = model::project_input(tape.constant(x), tape.constant(cof), pv, cfg, false,
                                    drop)
                   .value();

  // Equation-by-equation reimplementation on plain scalars.
  const std::size_t e = cfg.embed;
  Tensor joined = concat({x, cof}, 3);
  Tensor u_xi = matmul_last(joined, params.input_w);  // P x N x E
  Tensor normed(u_xi.shape());
  for (std::size_t row = 0; row < u_xi.size() / e; ++row) {
    double ms = 0.0;
    for (std::size_t j = 0; j < e; ++j) ms += u_xi[row * e + j] * u_xi[row * e + j];
    const double denom = std::sqrt(ms / double(e) + 1e-8);
    for (std::size_t j = 0; j < e; ++j) normed[row * e + j] = u_xi[row * e + j] / denom;
  }
  Tensor pre = matmul_last(normed, params.input_glu_w);  // P x N x 2E
  Tensor expect(u_xi.shape());
  for (std::size_t row = 0; row < u_xi.size() / e; ++row) {
    for (std::size_t j = 0; j < e; ++j) {
      const double glu = pre[row * 2 * e + j] * sigmoid(pre[row * 2 * e + e + j]);
      expect[row * e + j] = glu + u_xi[row * e + j];
    }
  }
  CHECK(max_abs_diff(out, rearrange(expect, "p n e -> e p n")) <= 1e-12);
}

TEST_CASE("atk_pool reduces to the mean under equal scores and full ratio") {
  auto cfg = desk();
  cfg.rho_temporal = 1.0;  // pool every history step
  Rng rng(74);
  auto params = model::WeaverParameters::init(cfg, rng);
  for (auto& x : params.scorer_spatial.values()) x = 0.0;  // constant scores
  Tensor u = random_tensor({cfg.history, cfg.nodes, cfg.embed}, rng);
  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  auto pool = model::atk_pool(tape.constant(u), model::Axis::Spatial, pv, cfg);
  Tensor expect = mode_mean(u, 1);
  CHECK(max_abs_diff(pool.pooled.value(), expect) <= 1e-12);
}

TEST_CASE("atk_pool matches a hand evaluation at N=1, P=2") {
  auto cfg = desk();
  cfg.nodes = 1;
  cfg.history = 2;
  cfg.embed = 2;
  cfg.heads = 1;
  cfg.scorers_spatial = 1;
  cfg.rho_temporal = 1.0;  // k = 2
  Rng rng(75);
  auto params = model::WeaverParameters::init(cfg, rng);
  params.scorer_spatial = Tensor({2, 1}, {3.0, 4.0});  // normalizes to (0.6, 0.8)
  Tensor u({2, 1, 2}, {1.0, 2.0, -1.0, 0.5});

  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  auto pool = model::atk_pool(tape.constant(u), model::Axis::Spatial, pv, cfg);

  // Scores: u . w with w = (0.6, 0.8): step0 = 2.2, step1 = -0.2.
  const double s0 = 1.0 * 0.6 + 2.0 * 0.8;
  const double s1 = -1.0 * 0.6 + 0.5 * 0.8;
  const double w0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
  const double w1 = 1.0 - w0;
  CHECK(pool.scorer == 0);
  CHECK(pool.pooled.value().at({0, 0}) ==
        doctest::Approx(w0 * 1.0 + w1 * -1.0).epsilon(1e-12));
  CHECK(pool.pooled.value().at({0, 1}) ==
        doctest::Approx(w0 * 2.0 + w1 * 0.5).epsilon(1e-12));
}

TEST_CASE("atk_pool selects the scorer with the larger informativeness") {
  auto cfg = desk();
  cfg.scorers_spatial = 2;
  Rng rng(76);
  auto params = model::WeaverParameters::init(cfg, rng);
  // Scorer 1 projects a high-variance direction, scorer 0 sees a constant.
  Tensor u({cfg.history, cfg.nodes, cfg.embed});
  for (std::size_t t = 0; t < cfg.history; ++t) {
    for (std::size_t n = 0; n < cfg.nodes; ++n) {
      u.at({t, n, 0}) = 1.0;             // constant channel
      u.at({t, n, 1}) = double(t) * 2.0; // strongly varying channel
    }
  }
  params.scorer_spatial = Tensor({cfg.embed, 2});
  params.scorer_spatial.at({0, 0}) = 1.0;  // scorer 0 reads the constant
  params.scorer_spatial.at({1, 1}) = 1.0;  // scorer 1 reads the varying channel
  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  auto pool = model::atk_pool(tape.constant(u), model::Axis::Spatial, pv, cfg);
  CHECK(pool.scorer == 1);
}

TEST_CASE("spatial encoding stacks ReLU layers") {
  auto cfg = desk();
  Rng rng(77);
  auto params = model::WeaverParameters::init(cfg, rng);
  Tensor u = random_tensor({cfg.nodes, cfg.embed}, rng);

  // All weights zero collapse to zero.
  {
    auto zero = params;
    for (auto& w : zero.spatial_stack) {
      for (auto& x : w.values()) x = 0.0;
    }
    ad::Tape tape;
    auto pv = model::lease(tape, zero, false);
    Tensor g = model::spatial_encoding(tape.constant(u), pv, cfg).value();
    for (double v : g.values()) CHECK(v == 0.0);
  }
  // kappa = 1 with zero kernel bias is a plain two-map ReLU network.
  {
    ad::Tape tape;
    auto zero_bias = params;
    for (auto& x : zero_bias.kern_bias.values()) x = 0.0;
    auto pv = model::lease(tape, zero_bias, false);
    Tensor g = model::spatial_encoding(tape.constant(u), pv, cfg).value();
    Tensor joined = concat({u, zero_bias.kern_bias}, 2);
    Tensor h = matmul_last(joined, zero_bias.spatial_stack[0]);
    for (auto& x : h.values()) x = std::max(x, 0.0);
    Tensor expect = matmul_last(h, zero_bias.spatial_stack[1]);
    CHECK(max_abs_diff(g, expect) <= 1e-13);
  }
  // Random case against an unrolled loop with two hidden layers.
  {
    auto cfg2 = desk();
    cfg2.spatial_widths = {7, 5};
    Rng rng2(78);
    auto params2 = model::WeaverParameters::init(cfg2, rng2);
    Tensor u2 = random_tensor({cfg2.nodes, cfg2.embed}, rng2);
    ad::Tape tape;
    auto pv = model::lease(tape, params2, false);
    Tensor g = model::spatial_encoding(tape.constant(u2), pv, cfg2).value();
    Tensor a = concat({u2, params2.kern_bias}, 2);
    for (std::size_t l = 0; l + 1 < params2.spatial_stack.size(); ++l) {
      a = matmul_last(a, params2.spatial_stack[l]);
      for (auto& x : a.values()) x = std::max(x, 0.0);
    }
    a = matmul_last(a, params2.spatial_stack.back());
    CHECK(max_abs_diff(g, a) <= 1e-12);
  }
}

TEST_CASE("temporal encoding concatenates cyclical features") {
  auto cfg = desk();
  Rng rng(79);
  auto params = model::WeaverParameters::init(cfg, rng);
  Tensor u = random_tensor({cfg.history, cfg.embed}, rng);
  Tensor bd = time_features(cfg.history);
  ad::Tape tape;
  auto pv = model::lease(tape, params, false);
  Tensor g = model::temporal_encoding(tape.constant(u), bd, pv, cfg).value();
  Tensor expect = matmul_last(concat({u, bd}, 2), params.temporal_w);
  CHECK(max_abs_diff(g, expect) <= 1e-13);

  CHECK_THROWS_AS(model::temporal_encoding(tape.constant(u), std::nullopt, pv, cfg),
                  ValueError);

  // NT variant: plain E x E map.
  auto cfg_nt = desk(false);
  Rng rng_nt(80);
  auto params_nt = model::WeaverParameters::init(cfg_nt, rng_nt);
  ad::Tape tape_nt;
  auto pv_nt = model::lease(tape_nt, params_nt, false);
  Tensor g_nt = model::temporal_encoding(tape_nt.constant(u), std::nullopt, pv_nt, cfg_nt)
                    .value();
  CHECK(max_abs_diff(g_nt, matmul_last(u, params_nt.temporal_w)) <= 1e-13);
}

TEST_CASE("local attention is the CTC kernel on projected inputs") {
  auto cfg = desk();
  Rng rng(81);
  auto params = model::WeaverParameters::init(cfg, rng);

  // Identical rows with W_Q = W_K give unit diagonal.
  {
    auto p2 = params;
    p2.k_spatial = p2.q_spatial;
    Tensor g({cfg.nodes, cfg.embed});
    Tensor row = random_tensor({cfg.embed}, rng);
    for (std::size_t n = 0; n < cfg.nodes; ++n) {
      for (std::size_t e = 0; e < cfg.embed; ++e) g.at({n, e}) = row[e];
    }
    ad::Tape tape;
    auto pv = model::lease(tape, p2, false);
    Tensor th = model::local_attention(tape.constant(g), model::Axis::Spatial, pv, cfg).value();
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      for (std::size_t i = 0; i < cfg.nodes; ++i) {
        CHECK(th.at({h, i, i}) == doctest::Approx(1.0).epsilon(1e-4));
      }
    }
  }
  // Zero input floors at zero.
  {
    ad::Tape tape;
    auto pv = model::lease(tape, params, false);
    Tensor th = model::local_attention(tape.constant(Tensor({cfg.nodes, cfg.embed})),
                                       model::Axis::Spatial, pv, cfg)
                    .value();
    for (double v : th.values()) CHECK(v == 0.0);
  }
  // Composition oracle.
  {
    Tensor g = random_tensor({cfg.nodes, cfg.embed}, rng);
    ad::Tape tape;
    auto pv = model::lease(tape, params, false);
    Tensor th = model::local_attention(tape.constant(g), model::Axis::Spatial, pv, cfg).value();
    Tensor q = rearrange(matmul_last(g, params.q_spatial), "n (h d) -> h n d",
                         {{"h", cfg.heads}});
    Tensor k = rearrange(matmul_last(g, params.k_spatial), "n (h d) -> h n d",
                         {{"h", cfg.heads}});
    Tensor expect = attn::ctc(attn::QueryKeyBatch{q, k, 1e-6});
    CHECK(max_abs_diff(th, expect) <= 1e-13);
  }
}

TEST_CASE("st_kronecker_layer identities") {
  auto cfg = desk();
  Rng rng(82);
  auto params = model::WeaverParameters::init(cfg, rng);
  const std::size_t p = cfg.history, n = cfg.nodes, h = cfg.heads;
  Tensor u = random_tensor({cfg.embed, p, n}, rng);

  // Identity factors with zero mixing weights return the residual.
  {
    auto zero = params;
    for (auto& x : zero.headmix_w.values()) x = 0.0;
    Tensor eye_s({h, n, n});
    Tensor eye_t({h, p, p});
    for (std::size_t hh = 0; hh < h; ++hh) {
      for (std::size_t i = 0; i < n; ++i) eye_s[(hh * n + i) * n + i] = 1.0;
      for (std::size_t i = 0; i < p; ++i) eye_t[(hh * p + i) * p + i] = 1.0;
    }
    ad::Tape tape;
    auto pv = model::lease(tape, zero, false);
    Rng drop(0);
    Tensor out = model::st_kronecker_layer(tape.constant(u), tape.constant(eye_s),
                                           tape.constant(eye_t), pv, cfg, false, drop)
                     .value();
    CHECK(max_abs_diff(out, rearrange(u, "e p n -> p n e")) <= 1e-15);
  }
  // H = 1 reduces to kmv_reference per feature column plus consolidation.
  {
    auto cfg1 = desk();
    cfg1.heads = 1;
    Rng rng1(83);
    auto params1 = model::WeaverParameters::init(cfg1, rng1);
    Tensor u1 = random_tensor({cfg1.embed, p, n}, rng1);
    Tensor ts = random_tensor({1, n, n}, rng1);
    Tensor tt = random_tensor({1, p, p}, rng1);
    ad::Tape tape;
    auto pv = model::lease(tape, params1, false);
    Rng drop(0);
    Tensor out = model::st_kronecker_layer(tape.constant(u1), tape.constant(ts),
                                           tape.constant(tt), pv, cfg1, false, drop)
                     .value();
    // Oracle: per-column kmv_reference, consolidation recomputed by hand.
    Tensor tsm({n, n});
    Tensor ttm({p, p});
    std::copy(ts.data(), ts.data() + n * n, tsm.data());
    std::copy(tt.data(), tt.data() + p * p, ttm.data());
    const std::size_t e = cfg1.embed;
    Tensor z_cat({p * n, e});
    for (std::size_t ee = 0; ee < e; ++ee) {
      Tensor col({p * n});
      for (std::size_t t = 0; t < p; ++t) {
        for (std::size_t s = 0; s < n; ++s) col[t * n + s] = u1.at({ee, t, s});
      }
      Tensor msg = kron::kmv_reference(ttm, tsm, col);
      for (std::size_t i = 0; i < p * n; ++i) z_cat.at({i, ee}) = msg[i];
    }
    Tensor mixed = matmul_last(z_cat, params1.headmix_w);
    Tensor expect({p, n, e});
    for (std::size_t t = 0; t < p; ++t) {
      for (std::size_t s = 0; s < n; ++s) {
        for (std::size_t j = 0; j < e; ++j) {
          const double sig = mixed.at({t * n + s, j});
          const double gate = mixed.at({t * n + s, e + j});
          expect.at({t, s, j}) = sig * sigmoid(gate) + u1.at({j, t, s});
        }
      }
    }
    CHECK(max_abs_diff(out, expect) <= 1e-12);
  }
}

TEST_CASE("forecast head residual and readout behavior") {
  auto cfg = desk();
  Rng rng(84);
  auto params = model::WeaverParameters::init(cfg, rng);
  Tensor z = random_tensor({cfg.history, cfg.nodes, cfg.embed}, rng);

  // Zero MLP weights leave Z untouched before the readout.
  {
    auto zero = params;
    for (auto& x : zero.up_w.values()) x = 0.0;
    for (auto& x : zero.up_b.values()) x = 0.0;
    for (auto& x : zero.dn_w.values()) x = 0.0;
    for (auto& x : zero.dn_b.values()) x = 0.0;
    ad::Tape tape;
    auto pv = model::lease(tape, zero, false);
    Rng drop(0);
    Tensor y = model::forecast_head(tape.constant(z), pv, cfg, false, drop).value();
    // Expected: readout of the final history step of Z itself.
    Tensor last({cfg.nodes, cfg.embed});
    for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
      for (std::size_t e = 0; e < cfg.embed; ++e) {
        last.at({nn, e}) = z.at({cfg.history - 1, nn, e});
      }
    }
    Tensor flat = matmul_last(last, zero.readout_w);
    for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
      for (std::size_t q = 0; q < cfg.horizon; ++q) {
        CHECK(y.at({q, nn, 0}) ==
              doctest::Approx(flat.at({nn, q}) + zero.readout_b[q]).epsilon(1e-12));
      }
    }
  }
  // Zero readout broadcasts the bias.
  {
    auto zero = params;
    for (auto& x : zero.readout_w.values()) x = 0.0;
    ad::Tape tape;
    auto pv = model::lease(tape, zero, false);
    Rng drop(0);
    Tensor y = model::forecast_head(tape.constant(z), pv, cfg, false, drop).value();
    for (std::size_t q = 0; q < cfg.horizon; ++q) {
      for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
        CHECK(y.at({q, nn, 0}) == zero.readout_b[q]);
      }
    }
  }
  // Random case against an equation-by-equation reimplementation.
  {
    ad::Tape tape;
    auto pv = model::lease(tape, params, false);
    Rng drop(0);
    Tensor y = model::forecast_head(tape.constant(z), pv, cfg, false, drop).value();
    const std::size_t e = cfg.embed, mze = cfg.mlp_expansion * cfg.embed;
    Tensor up = matmul_last(z, params.up_w);
    for (std::size_t row = 0; row < up.size() / mze; ++row) {
      for (std::size_t j = 0; j < mze; ++j) {
        double v = up[row * mze + j] + params.up_b[j];
        up[row * mze + j] = v > 0.0 ? v : cfg.leaky_slope * v;
      }
    }
    Tensor z1 = matmul_last(up, params.dn_w);
    for (std::size_t row = 0; row < z1.size() / e; ++row) {
      for (std::size_t j = 0; j < e; ++j) {
        z1[row * e + j] += params.dn_b[j] + z[row * e + j];
      }
    }
    Tensor last({cfg.nodes, e});
    for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
      for (std::size_t j = 0; j < e; ++j) {
        last.at({nn, j}) = z1.at({cfg.history - 1, nn, j});
      }
    }
    Tensor flat = matmul_last(last, params.readout_w);
    for (std::size_t q = 0; q < cfg.horizon; ++q) {
      for (std::size_t nn = 0; nn < cfg.nodes; ++nn) {
        CHECK(y.at({q, nn, 0}) ==
              doctest::Approx(flat.at({nn, q}) + params.readout_b[q]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("weaver_forward shape contract, determinism and stage errors") {
  auto cfg = desk();
  Rng rng(85);
  auto params = model::WeaverParameters::init(cfg, rng);
  Tensor x = random_tensor({cfg.history, cfg.nodes, cfg.channels}, rng);
  Tensor bd = time_features(cfg.history);
  Tensor y1 = model::weaver_forward(x, bd, params, cfg);
  Tensor y2 = model::weaver_forward(x, bd, params, cfg);
  CHECK(y1.shape() == Shape{cfg.horizon, cfg.nodes, cfg.channels});
  CHECK(max_abs_diff(y1, y2) == 0.0);

  // Stage names propagate with errors.
  try {
    model::weaver_forward(x, std::nullopt, params, cfg);
    FAIL("expected missing-timestamp error");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("temporal_encoding") != std::string::npos);
  }
  CHECK_THROWS_AS(model::weaver_forward(Tensor({1, 2, 3}), bd, params, cfg), ShapeError);
}

TEST_CASE("full-model gradient check at desk scale (T and NT)") {
  auto t = verify::model_gradient_check(desk(true), 2001);
  CAPTURE(t.worst_param);
  CHECK_MESSAGE(t.pass, "T variant worst rel err " << t.max_rel_err);
  auto nt = verify::model_gradient_check(desk(false), 2002);
  CAPTURE(nt.worst_param);
  CHECK_MESSAGE(nt.pass, "NT variant worst rel err " << nt.max_rel_err);
}

TEST_CASE("mae loss examples") {
  Tensor y({1, 2, 1}, {10.0, 20.0});
  Tensor same = y;
  CHECK(model::mae_loss(same, y) == 0.0);
  Tensor yh({1, 2, 1}, {12.0, 18.0});
  CHECK(model::mae_loss(yh, y) == doctest::Approx(2.0).epsilon(1e-15));
  Tensor big({1, 2, 1}, {12.0, 120.0});
  Tensor mask({1, 2, 1}, {1.0, 0.0});
  CHECK(model::mae_loss(big, y, &mask) == doctest::Approx(2.0).epsilon(1e-15));
  Tensor empty_mask({1, 2, 1}, {0.0, 0.0});
  CHECK_THROWS_AS(model::mae_loss(big, y, &empty_mask), ValueError);
}

TEST_CASE("checkpoint round trip preserves config and parameters") {
  auto cfg = desk();
  Rng rng(86);
  auto params = model::WeaverParameters::init(cfg, rng);
  const std::string path = "test_checkpoint.wvr";
  model::save_checkpoint(path, cfg, params);
  auto [cfg2, params2] = model::load_checkpoint(path);
  CHECK(cfg2.history == cfg.history);
  CHECK(cfg2.embed == cfg.embed);
  CHECK(cfg2.use_time_metadata == cfg.use_time_metadata);
  auto a = params.entries();
  auto b = params2.entries();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(max_abs_diff(*a[i].second, *b[i].second) == 0.0);
  }
  std::remove(path.c_str());
}

TEST_CASE("config text round trip") {
  auto cfg = desk();
  cfg.spatial_widths = {16, 8};
  std::stringstream ss;
  cfg.to_stream(ss);
  auto cfg2 = model::WeaverConfig::from_stream(ss);
  CHECK(cfg2.spatial_widths == cfg.spatial_widths);
  CHECK(cfg2.rho_spatial == cfg.rho_spatial);
  std::stringstream bad("nonsense=1\n");
  CHECK_THROWS_AS(model::WeaverConfig::from_stream(bad), ValueError);
}

TEST_CASE("verify model suite passes") {
  for (const auto& r : verify::run_suite("model", 99)) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.pass);
  }
}

TEST_SUITE_END();
