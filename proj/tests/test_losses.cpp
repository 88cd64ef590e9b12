#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "usev/autodiff.hpp"
#include "usev/error.hpp"
#include "usev/losses.hpp"

using namespace usev;

TEST_CASE("stabilizer and default weights") {
  CHECK(kEpsilon == 1e-8);
  const LossWeights w;
  CHECK(w.alpha == 0.005);
  CHECK(w.beta == 1.0);
  CHECK(w.gamma == 1.0);
  CHECK(w.delta == 0.005);
  CHECK(w.str() == "0.005-1-1-0.005");
  CHECK(LossWeights::parse("0.005,1,1,0.005") == w);
  CHECK_THROWS_AS(LossWeights::parse("0-0-0-0").validate(), Error);
  CHECK_THROWS_AS(LossWeights::parse("1-2-3").validate(), Error);
}

TEST_CASE("uniform loss closed forms") {
  const std::vector<double> z(10, 0.0);
  CHECK(loss_uniform(z, z) == 0.0);
  std::vector<double> e(10, 0.0);
  e[3] = 1e-4;
  CHECK(loss_uniform(e, z) == doctest::Approx(3.0103).epsilon(1e-5));
  CHECK(loss_uniform(e, z) == doctest::Approx(-10.0 * std::log10(0.5)).epsilon(1e-12));
}

TEST_CASE("sdr loss closed forms") {
  std::vector<double> s(4, 0.0);
  s[0] = 1.0;
  CHECK(loss_sdr(s, s) == doctest::Approx(-80.0).epsilon(1e-12));
  const std::vector<double> z(4, 0.0);
  CHECK(std::abs(loss_sdr(z, s)) <= 1e-7);
}

TEST_CASE("energy loss closed forms") {
  const std::vector<double> z(100, 0.0);
  CHECK(loss_energy(z) == -80.0);
  CHECK(loss_energy(z) == 10.0 * std::log10(1e-8));
  std::vector<double> u(3, 0.0);
  u[1] = 1.0;
  CHECK(std::abs(loss_energy(u)) <= 1e-7);
}

TEST_CASE("differentiated loss reductions") {
  const std::size_t n = 200;
  std::mt19937_64 rng(1);
  const auto est = oracle::randn(n, rng);
  const auto ref = oracle::randn(n, rng);
  const LossWeights w;
  const auto ss = track_from_labels(std::vector<Scenario>(n, Scenario::SS));
  CHECK(loss_differentiated(est, ref, ss, w) == doctest::Approx(loss_sdr(est, ref)).epsilon(1e-14));
  const auto qq = track_from_labels(std::vector<Scenario>(n, Scenario::QQ));
  const std::vector<double> z(n, 0.0);
  CHECK(loss_differentiated(z, ref, qq, w) == doctest::Approx(-0.4).epsilon(1e-14));
}

TEST_CASE("losses match independent implementations") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> len(100, 5000);
  const LossWeights w{0.3, 1.1, 0.7, 0.2};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = len(rng);
    const auto ref = oracle::randn(n, rng);
    const auto est = oracle::randn(n, rng, 0.5);
    CHECK(oracle::rel_err(loss_uniform(est, ref), oracle::uniform_loss(est, ref)) <= 1e-12);
    CHECK(oracle::rel_err(loss_sdr(est, ref), oracle::sdr_loss(est, ref)) <= 1e-12);
    CHECK(oracle::rel_err(loss_energy(est), oracle::energy_loss(est)) <= 1e-12);
    const auto labels = oracle::random_labels(n, rng, n / 5 + 1);
    const auto tr = track_from_labels(labels);
    CHECK(oracle::rel_err(loss_differentiated(est, ref, tr, w),
                          oracle::differentiated(est, ref, labels, w.alpha, w.beta, w.gamma,
                                                 w.delta)) <= 1e-12);
  }
}

TEST_CASE("graph losses agree with the plain ones") {
  std::mt19937_64 rng(4);
  const auto ref = oracle::randn(300, rng);
  const auto est = oracle::randn(300, rng);
  const auto t = ad::Tensor::from({300}, est);
  const auto tr = track_from_labels(oracle::random_labels(300, rng, 60));
  const LossWeights w;
  CHECK(loss_uniform(t, ref).item() == doctest::Approx(loss_uniform(est, ref)).epsilon(1e-13));
  CHECK(loss_sdr(t, ref).item() == doctest::Approx(loss_sdr(est, ref)).epsilon(1e-13));
  CHECK(loss_energy(t).item() == doctest::Approx(loss_energy(est)).epsilon(1e-13));
  CHECK(loss_differentiated(t, ref, tr, w).item() ==
        doctest::Approx(loss_differentiated(est, ref, tr, w)).epsilon(1e-13));
}

TEST_CASE("zeroed weights leave the matching samples without gradient") {
  std::mt19937_64 rng(21);
  const std::size_t n = 400;
  const auto ref = oracle::randn(n, rng);
  const auto labels = oracle::random_labels(n, rng, 50);
  const auto tr = track_from_labels(labels);
  for (int pass = 0; pass < 2; ++pass) {
    const LossWeights w = pass == 0 ? LossWeights{0, 1, 1, 0} : LossWeights{0.005, 0, 0, 0.005};
    auto est = ad::Tensor::from({n}, oracle::randn(n, rng), true);
    ad::backward(loss_differentiated(est, ref, tr, w));
    const auto g = est.grad();
    REQUIRE(g.size() == n);
    std::size_t silent = 0, live = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool target = target_active(labels[i]);
      const bool zeroed = pass == 0 ? !target : target;
      if (zeroed) silent += g[i] != 0.0;
      else live += g[i] != 0.0;
    }
    CHECK(silent == 0);
    CHECK(live > 0);
  }
}

TEST_CASE("shape mismatch") {
  const std::vector<double> a(3), b(4);
  CHECK_THROWS_AS(loss_uniform(a, b), Error);
  CHECK_THROWS_AS(loss_sdr(a, b), Error);
  const auto tr = track_from_labels(std::vector<Scenario>(4, Scenario::SS));
  CHECK_THROWS_AS(loss_differentiated(a, a, tr, LossWeights{}), Error);
}

TEST_CASE("losses fall as the estimate approaches the reference") {
  std::mt19937_64 rng(8);
  const auto ref = oracle::randn(500, rng);
  const auto noise = oracle::randn(500, rng);
  double prev_u = 1e300, prev_s = 1e300;
  for (double k : {1.0, 0.5, 0.25, 0.1, 0.01}) {
    std::vector<double> est(ref);
    for (std::size_t i = 0; i < est.size(); ++i) est[i] += k * noise[i];
    CHECK(loss_uniform(est, ref) < prev_u);
    CHECK(loss_sdr(est, ref) < prev_s);
    prev_u = loss_uniform(est, ref);
    prev_s = loss_sdr(est, ref);
  }
  double prev_e = -1e300;
  for (double g : {0.001, 0.01, 0.1, 1.0}) {
    std::vector<double> est(noise);
    for (auto& v : est) v *= g;
    CHECK(loss_energy(est) > prev_e);
    prev_e = loss_energy(est);
  }
}
