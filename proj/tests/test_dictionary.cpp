#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "weaver/dictionary.hpp"
#include "weaver/verify.hpp"

using namespace weaver;
using oracles::random_tensor;

namespace {

phase::PhaseDictionary make_dict(std::size_t p, std::size_t n, std::size_t c, std::size_t m,
                                 std::size_t k, std::uint64_t seed, double dropout = 0.1) {
  Rng rng(seed);
  return phase::PhaseDictionary::init(p, n, c, m, k, dropout, rng);
}

}  // namespace

TEST_SUITE_BEGIN("dictionary");

TEST_CASE("one-hot retrieval copies a landmark row") {
  const std::size_t p = 3, n = 2, c = 1, m = 4, k = 2;
  auto dict = make_dict(p, n, c, m, k, 51);
  // Zero projector plus an extreme bias drives every node to landmark 2.
  for (auto& x : dict.query_w.values()) x = 0.0;
  for (auto& x : dict.query_b.values()) x = 0.0;
  const std::size_t target = 2;
  dict.query_b[target] = 1000.0;       // GLU signal half
  dict.query_b[m + target] = 1000.0;   // GLU gate half
  Rng rng(52);
  Tensor x = random_tensor({p, n, c}, rng);
  Tensor weights = phase::retrieval_weights(x, dict);
  for (std::size_t node = 0; node < n; ++node) {
    for (std::size_t j = 0; j < m; ++j) {
      CHECK(weights.at({node, j}) == doctest::Approx(j == target ? 1.0 : 0.0));
    }
  }
  Tensor xi = phase::retrieve_cofactors(x, dict);
  for (std::size_t t = 0; t < p; ++t) {
    for (std::size_t node = 0; node < n; ++node) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        CHECK(xi.at({t, node, kk}) ==
              doctest::Approx(dict.landmarks.at({target, t * k + kk})).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("equal logits retrieve the landmark mean") {
  const std::size_t p = 2, n = 3, c = 1, m = 5, k = 2;
  auto dict = make_dict(p, n, c, m, k, 53);
  for (auto& x : dict.query_w.values()) x = 0.0;
  for (auto& x : dict.query_b.values()) x = 0.0;
  Rng rng(54);
  Tensor x = random_tensor({p, n, c}, rng);
  Tensor xi = phase::retrieve_cofactors(x, dict);
  for (std::size_t t = 0; t < p; ++t) {
    for (std::size_t node = 0; node < n; ++node) {
      for (std::size_t kk = 0; kk < k; ++kk) {
        double mean = 0.0;
        for (std::size_t j = 0; j < m; ++j) mean += dict.landmarks.at({j, t * k + kk});
        mean /= double(m);
        CHECK(xi.at({t, node, kk}) == doctest::Approx(mean).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("larger node temperature keeps at least the same support") {
  const std::size_t p = 3, n = 2, c = 1, m = 8, k = 2;
  auto dict = make_dict(p, n, c, m, k, 55);
  Rng rng(56);
  Tensor x = random_tensor({p, n, c}, rng, -2.0, 2.0);
  // Same logits per node (identical input columns), different temperatures.
  for (std::size_t t = 0; t < p; ++t) {
    for (std::size_t node = 1; node < n; ++node) x.at({t, node, 0}) = x.at({t, 0, 0});
  }
  auto support_at = [&](double tau_pre) {
    for (auto& v : dict.tau.values()) v = tau_pre;
    Tensor w = phase::retrieval_weights(x, dict);
    std::size_t s = 0;
    for (std::size_t j = 0; j < m; ++j) s += w.at({0, j}) > 0.0;
    return s;
  };
  std::size_t prev = 0;
  for (double pre : {-2.0, 0.0, 2.0, 4.0}) {
    const std::size_t s = support_at(pre);  // softplus is increasing in pre
    CHECK(s >= prev);
    prev = s;
  }
}

TEST_CASE("retrieval rejects mismatched inputs") {
  auto dict = make_dict(3, 2, 1, 4, 2, 57);
  Rng rng(58);
  CHECK_THROWS_AS(phase::retrieve_cofactors(random_tensor({4, 2, 1}, rng), dict), ShapeError);
  CHECK_THROWS_AS(phase::retrieve_cofactors(random_tensor({3, 5, 1}, rng), dict), ShapeError);
  CHECK_THROWS_AS(phase::retrieve_cofactors(random_tensor({3, 2, 2}, rng), dict), ShapeError);
}

TEST_CASE("training dropout perturbs retrieval, eval does not") {
  const std::size_t p = 4, n = 3, c = 1;
  auto dict = make_dict(p, n, c, 6, 2, 59, 0.5);
  Rng rng(60);
  Tensor x = random_tensor({p, n, c}, rng);
  Rng r1(1), r2(2), r3(3), r4(3);
  Tensor eval1 = phase::retrieve_cofactors(x, dict, false, r1);
  Tensor eval2 = phase::retrieve_cofactors(x, dict, false, r2);
  CHECK(max_abs_diff(eval1, eval2) == 0.0);
  Tensor train1 = phase::retrieve_cofactors(x, dict, true, r3);
  Tensor train2 = phase::retrieve_cofactors(x, dict, true, r4);
  CHECK(max_abs_diff(train1, train2) == 0.0);  // same rng stream, same mask
  CHECK(max_abs_diff(train1, eval1) > 0.0);
}

TEST_CASE("gradients reach every dictionary parameter") {
  const std::size_t p = 3, n = 4, c = 1, m = 5, k = 2;
  auto dict = make_dict(p, n, c, m, k, 61);
  Rng rng(62);
  Tensor x = random_tensor({p, n, c}, rng);
  Tensor mixer = random_tensor({p, n, k}, rng);

  auto loss_of = [&](const phase::PhaseDictionary& d) {
    ad::Tape tape;
    phase::PhaseDictionaryVars vars{tape.constant(d.landmarks), tape.constant(d.query_w),
                                    tape.constant(d.query_b), tape.constant(d.tau)};
    Rng drop(0);
    ad::Var xi = phase::retrieve_cofactors(tape.constant(x), vars, d, false, drop);
    return ad::sum_all(ad::mul(xi, tape.constant(mixer))).value().item();
  };

  ad::Tape tape;
  phase::PhaseDictionaryVars vars{tape.variable(dict.landmarks), tape.variable(dict.query_w),
                                  tape.variable(dict.query_b), tape.variable(dict.tau)};
  Rng drop(0);
  ad::Var xi = phase::retrieve_cofactors(tape.constant(x), vars, dict, false, drop);
  ad::Var loss = ad::sum_all(ad::mul(xi, tape.constant(mixer)));
  tape.backward(loss);

  struct Item {
    const char* name;
    Tensor* host;
    ad::Var var;
  };
  std::vector<Item> items = {{"landmarks", &dict.landmarks, vars.landmarks},
                             {"query_w", &dict.query_w, vars.query_w},
                             {"query_b", &dict.query_b, vars.query_b},
                             {"tau", &dict.tau, vars.tau}};
  const double h = 1e-5;
  for (auto& item : items) {
    CAPTURE(item.name);
    const Tensor& g = tape.grad(item.var);
    double norm = 0.0;
    for (double v : g.values()) norm += v * v;
    CHECK(norm > 0.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < item.host->size(); ++i) {
      const double keep = (*item.host)[i];
      (*item.host)[i] = keep + h;
      const double up = loss_of(dict);
      (*item.host)[i] = keep - h;
      const double dn = loss_of(dict);
      (*item.host)[i] = keep;
      const double fd = (up - dn) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1.0}));
    }
    CHECK_MESSAGE(worst < 1e-4, item.name << " fd mismatch " << worst);
  }
}

TEST_CASE("verify dictionary suite passes") {
  for (const auto& r : verify::run_suite("dictionary", 77)) {
    CAPTURE(r.name);
    CAPTURE(r.detail);
    CHECK(r.pass);
  }
}

TEST_SUITE_END();
