#include <doctest.h>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <numbers>

#include "hemf/math.hpp"
#include "hemf/model.hpp"
#include "hemf/rng.hpp"
#include "support.hpp"

using namespace hemf;
using hemf::testing::random_pd;

TEST_CASE("digamma recurrence at the listed points") {
  for (double x : {0.5, 1.0, 7.3}) {
    CHECK(digamma(x + 1.0) - digamma(x) == doctest::Approx(1.0 / x).epsilon(1e-14));
  }
}

TEST_CASE("digamma special values") {
  CHECK(std::abs(digamma(1.0) - (-0.5772156649015329)) <= 1e-12);
  CHECK(std::abs(digamma(0.5) - (-1.9635100260214235)) <= 1e-12);
}

TEST_CASE("digamma agrees with boost") {
  CounterRng rng(11);
  for (int k = 0; k < 2000; ++k) {
    const double x = std::exp(std::log(1e-6) + rng.uniform() * (std::log(1e4) - std::log(1e-6)));
    const double ref = boost::math::digamma(x);
    CHECK(std::abs(digamma(x) - ref) <= 1e-12 * std::max(1.0, std::abs(ref)));
  }
}

TEST_CASE("digamma recurrence on random points") {
  CounterRng rng(3);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const double x = 1e-3 + rng.uniform() * (1e3 - 1e-3);
    worst = std::max(worst, std::abs(digamma(x + 1.0) - digamma(x) - 1.0 / x));
  }
  CHECK(worst <= 1e-11);
}

TEST_CASE("digamma rejects non-positive arguments") {
  CHECK_THROWS_AS(digamma(0.0), DomainError);
  CHECK_THROWS_AS(digamma(-1.5), DomainError);
  CHECK_THROWS_AS(digamma(std::nan("")), DomainError);
}

TEST_CASE("multivariate digamma") {
  for (double x : {0.3, 1.0, 4.2}) CHECK(multivariate_digamma(x, 1) == digamma(x));
  CHECK(std::abs(multivariate_digamma(3.0, 2) -
                 (boost::math::digamma(3.0) + boost::math::digamma(2.5))) <= 1e-12);
  CHECK(std::abs(multivariate_digamma(2.0, 3) -
                 (boost::math::digamma(2.0) + boost::math::digamma(1.5) +
                  boost::math::digamma(1.0))) <= 1e-12);
  CHECK_THROWS_AS(multivariate_digamma(1.0, 3), DomainError);
  CHECK_THROWS_AS(multivariate_digamma(0.5, 2), DomainError);
}

TEST_CASE("log multivariate gamma agrees with boost lgamma") {
  for (std::size_t p : {1u, 2u, 4u}) {
    for (double x : {2.5, 3.0, 10.25}) {
      double ref = static_cast<double>(p * (p - 1)) / 4.0 * std::log(std::numbers::pi);
      for (std::size_t i = 1; i <= p; ++i) {
        ref += boost::math::lgamma(x + (1.0 - static_cast<double>(i)) / 2.0);
      }
      CHECK(log_multivariate_gamma(x, p) == doctest::Approx(ref).epsilon(1e-13));
    }
  }
}

TEST_CASE("log beta") {
  CHECK(log_beta(2.0, 3.0) == doctest::Approx(std::log(1.0 / 12.0)).epsilon(1e-14));
}

TEST_CASE("pd inverse of the identity") {
  for (std::size_t L : {1u, 3u, 6u}) {
    const auto r = pd_inverse_logdet(SymmetricPD::identity(L));
    CHECK(r.inverse == Mat::Identity(L, L));
    CHECK(r.logdet == 0.0);
  }
}

TEST_CASE("pd inverse of a diagonal matrix") {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = 2.0;
  m(1, 1) = 8.0;
  const auto r = pd_inverse_logdet(m);
  CHECK(r.inverse(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r.inverse(1, 1) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(r.inverse(0, 1) == 0.0);
  CHECK(r.logdet == doctest::Approx(std::log(16.0)).epsilon(1e-15));
}

TEST_CASE("pd inverse reconstruction and log-determinant up to dim 20") {
  CounterRng rng(5);
  for (std::size_t n = 1; n <= 20; ++n) {
    const Mat m = random_pd(n, rng);
    const auto r = pd_inverse_logdet(SymmetricPD(m));
    const auto k = static_cast<Eigen::Index>(n);
    CHECK((m * r.inverse - Mat::Identity(k, k)).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((r.inverse - r.inverse.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::SelfAdjointEigenSolver<Mat> eig(m);
    CHECK(std::abs(r.logdet - eig.eigenvalues().array().log().sum()) <= 1e-8);
    CHECK(pd_logdet(m) == r.logdet);
  }
}

TEST_CASE("not positive definite is a typed error") {
  Mat m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(pd_inverse_logdet(m), NotPositiveDefinite);
  CHECK_THROWS_AS(SymmetricPD{m}, NotPositiveDefinite);
  Mat asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(SymmetricPD{asym}, NotPositiveDefinite);
}

TEST_CASE("softmax") {
  Vec g(2);
  g << std::log(2.0), 0.0;
  const Vec w = softmax(g);
  CHECK(std::abs(w(0) - 2.0 / 3.0) <= 1e-12);
  CHECK(std::abs(w(1) - 1.0 / 3.0) <= 1e-12);
  Vec shifted = g.array() + 1234.5;
  CHECK(hemf::testing::max_abs(softmax(shifted), w) <= 1e-12);
  Vec big(3);
  big << 1e4, -1e4, 0.0;
  CHECK(softmax(big).sum() == doctest::Approx(1.0));
}

TEST_CASE("counter generator is reproducible and resumable") {
  CounterRng a(42), b(42);
  for (int k = 0; k < 10; ++k) a.next_u64();
  CounterRng c(42, a.counter());
  for (int k = 0; k < 10; ++k) b.next_u64();
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x == c.next_u64());
  }
}

TEST_CASE("counter generator moments") {
  CounterRng rng(9);
  const int n = 200000;
  double s = 0, s2 = 0, g = 0;
  for (int k = 0; k < n; ++k) {
    const double z = rng.normal();
    s += z;
    s2 += z * z;
    g += rng.gamma(2.5);
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(g / n - 2.5) < 0.03);
}

TEST_CASE("expected log-determinant of an inverse-Wishart by Monte Carlo") {
  // Sigma ~ iW(W, iota)  <=>  Sigma^-1 ~ Wishart(W^-1, iota)
  CounterRng rng(21);
  const std::size_t L = 3;
  const Mat W = random_pd(L, rng, 2.0);
  const double iota = 6.5;
  const Mat C = Eigen::LLT<Mat>(W.inverse()).matrixL();
  const int n = 40000;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    Mat A = Mat::Zero(L, L);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(L); ++i) {
      A(i, i) = std::sqrt(2.0 * rng.gamma(0.5 * (iota - static_cast<double>(i))));
      for (Eigen::Index j = 0; j < i; ++j) A(i, j) = rng.normal();
    }
    const Mat CA = C * A;
    acc -= pd_logdet(CA * CA.transpose());
  }
  CHECK(std::abs(acc / n - expected_logdet_inverse_wishart(W, iota)) < 0.02);
}
