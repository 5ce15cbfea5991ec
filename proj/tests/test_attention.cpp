#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "weaver/attention.hpp"
#include "weaver/verify.hpp"

using namespace weaver;
using oracles::random_tensor;

namespace {

attn::QueryKeyBatch single_pair(std::vector<double> q, std::vector<double> k) {
  const std::size_t d = q.size();
  return attn::QueryKeyBatch{Tensor({1, 1, d}, std::move(q)), Tensor({1, 1, d}, std::move(k)),
                             1e-6};
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("ctc critical values and hand cases") {
  CHECK(attn::ctc(single_pair({1, 1}, {1, 1})).item() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(attn::ctc(single_pair({-1, -1}, {1, 1})).item() ==
        doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
  CHECK(attn::ctc(single_pair({1, 0}, {0, 1})).item() == doctest::Approx(0.0));
  CHECK(attn::ctc(single_pair({2, 0}, {1, 0})).item() ==
        doctest::Approx(2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("ctc outputs stay in the valence range") {
  Rng rng(41);
  double lo = 1e9, hi = -1e9;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 1 + rng.index(16);
    attn::QueryKeyBatch qk{random_tensor({2, 10, d}, rng, -4.0, 4.0),
                           random_tensor({2, 10, d}, rng, -4.0, 4.0), 1e-6};
    Tensor th = attn::ctc(qk);
    for (double x : th.values()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  CHECK(lo >= -1.0 / 3.0 - 1e-9);
  CHECK(hi <= 1.0 + 1e-9);
}

TEST_CASE("sdpa softmax normalizes rows") {
  // Equal logits spread mass uniformly.
  attn::QueryKeyBatch qk{Tensor({1, 1, 1}, {0.0}), Tensor({1, 4, 1}, {0, 0, 0, 0}), 1e-6};
  Tensor uniform = attn::sdpa_softmax(qk);
  for (double x : uniform.values()) CHECK(x == doctest::Approx(0.25));

  // Logits [ln 1, ln 3] -> [0.25, 0.75] (d_head = 1 keeps the scale at 1).
  attn::QueryKeyBatch qk2{Tensor({1, 1, 1}, {1.0}),
                          Tensor({1, 2, 1}, {std::log(1.0), std::log(3.0)}), 1e-6};
  Tensor th = attn::sdpa_softmax(qk2);
  CHECK(th[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(th[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(42);
  attn::QueryKeyBatch qk3{random_tensor({2, 5, 3}, rng), random_tensor({2, 6, 3}, rng), 1e-6};
  Tensor rows = attn::sdpa_softmax(qk3);
  for (std::size_t r = 0; r < 10; ++r) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 6; ++j) sum += rows[r * 6 + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t j = 0; j < 6; ++j) CHECK(rows[r * 6 + j] > 0.0);
  }
}

TEST_CASE("cosine coefficient") {
  CHECK(attn::cosine(single_pair({2, 0}, {3, 0})).item() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(attn::cosine(single_pair({2, 0}, {-3, 0})).item() ==
        doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(attn::cosine(single_pair({1, 1}, {1, 0})).item() ==
        doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-5));
}

TEST_CASE("entmax15 closed-form cases") {
  auto uniform = attn::entmax15(std::vector<double>{2.0, 2.0, 2.0, 2.0});
  for (double p : uniform) CHECK(p == 0.25);

  auto two = attn::entmax15(std::vector<double>{1.0, 1.0, -10.0});
  CHECK(two[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(two[2] == 0.0);

  auto gap = attn::entmax15(std::vector<double>{10.0, 0.0});
  CHECK(gap[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(gap[1] == 0.0);

  CHECK_THROWS_AS(attn::entmax15(std::vector<double>{}), ValueError);
  CHECK_THROWS_AS(attn::entmax15(std::vector<double>{1.0}, 0.0), ValueError);
}

TEST_CASE("entmax15 matches the bisection oracle") {
  Rng rng(43);
  double worst = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t d = 2 + rng.index(31);
    std::vector<double> logits(d);
    for (auto& x : logits) x = rng.uniform(-5.0, 5.0);
    auto exact = attn::entmax15(logits);
    auto oracle = oracles::entmax15_bisect(logits);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      worst = std::max(worst, std::abs(exact[i] - oracle[i]));
      sum += exact[i];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("entmax15 support grows with temperature") {
  Rng rng(44);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = 3 + rng.index(20);
    std::vector<double> logits(d);
    for (auto& x : logits) x = rng.uniform(-3.0, 3.0);
    auto p1 = oracles::entmax15_bisect(logits, 1.0);
    auto p2 = oracles::entmax15_bisect(logits, 2.0);
    std::size_t s1 = 0, s2 = 0;
    for (double x : p1) s1 += x > 1e-14;
    for (double x : p2) s2 += x > 1e-14;
    CHECK(s2 >= s1);
  }
}

TEST_CASE("entmax15 rows with per-row temperatures") {
  Tensor logits({2, 3}, {1.0, 1.0, -10.0, 4.0, 0.0, 0.0});
  Tensor temps({2, 1}, {1.0, 100.0});
  Tensor p = attn::entmax15_rows(logits, temps);
  CHECK(p.at({0, 0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.at({0, 2}) == 0.0);
  // High temperature flattens the second row toward uniform.
  CHECK(p.at({1, 1}) > 0.25);
}

TEST_CASE("differentiable entmax matches finite differences") {
  Rng rng(45);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t d = 3 + rng.index(6);
    Tensor logits = random_tensor({2, d}, rng, -2.0, 2.0);
    Tensor mixer = random_tensor({2, d}, rng);
    auto loss_of = [&](const Tensor& l) {
      ad::Tape tape;
      ad::Var out = attn::entmax15_rows(tape.variable(l));
      return ad::sum_all(ad::mul(out, tape.constant(mixer))).value().item();
    };
    ad::Tape tape;
    ad::Var lv = tape.variable(logits);
    ad::Var loss = ad::sum_all(ad::mul(attn::entmax15_rows(lv), tape.constant(mixer)));
    tape.backward(loss);
    const Tensor& g = tape.grad(lv);
    const double h = 1e-6;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      Tensor lp = logits, lm = logits;
      lp[i] += h;
      lm[i] -= h;
      const double fd = (loss_of(lp) - loss_of(lm)) / (2 * h);
      CHECK(std::abs(fd - g[i]) < 5e-5);
    }
  }
}

TEST_CASE("differentiable ctc composes to the plain kernel") {
  Rng rng(46);
  Tensor q = random_tensor({2, 4, 3}, rng);
  Tensor k = random_tensor({2, 5, 3}, rng);
  ad::Tape tape;
  Tensor via_ad = attn::ctc(tape.constant(q), tape.constant(k), 1e-6).value();
  Tensor plain = attn::ctc(attn::QueryKeyBatch{q, k, 1e-6});
  CHECK(max_abs_diff(via_ad, plain) <= 1e-13);
}

TEST_CASE("verify attention suite passes") {
  for (const auto& r : verify::run_suite("attention", 2024)) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.pass);
  }
}

TEST_SUITE_END();
