#include "hemf/math.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace hemf {

double digamma(double x) {
  if (!(x > 0.0)) {
    throw DomainError("digamma: argument must be positive, got " + std::to_string(x));
  }
  double shift = 0.0;
  while (x < 6.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number coefficients B_2k / (2k).
  const double series =
      inv2 *
      (1.0 / 12.0 -
       inv2 * (1.0 / 120.0 -
               inv2 * (1.0 / 252.0 -
                       inv2 * (1.0 / 240.0 -
                               inv2 * (1.0 / 132.0 -
                                       inv2 * (691.0 / 32760.0 -
                                               inv2 * (1.0 / 12.0 - inv2 * (3617.0 / 8160.0))))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

double multivariate_digamma(double x, std::size_t p) {
  if (p == 0) throw DomainError("multivariate_digamma: p must be positive");
  if (!(x > 0.5 * static_cast<double>(p - 1))) {
    throw DomainError("multivariate_digamma: need x > (p-1)/2");
  }
  double s = 0.0;
  for (std::size_t i = 1; i <= p; ++i) {
    s += digamma(x + 0.5 * (1.0 - static_cast<double>(i)));
  }
  return s;
}

double log_multivariate_gamma(double x, std::size_t p) {
  if (p == 0) throw DomainError("log_multivariate_gamma: p must be positive");
  if (!(x > 0.5 * static_cast<double>(p - 1))) {
    throw DomainError("log_multivariate_gamma: need x > (p-1)/2");
  }
  const double pd = static_cast<double>(p);
  double s = 0.25 * pd * (pd - 1.0) * std::log(std::numbers::pi);
  for (std::size_t i = 1; i <= p; ++i) {
    s += std::lgamma(x + 0.5 * (1.0 - static_cast<double>(i)));
  }
  return s;
}

double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

SymmetricPD::SymmetricPD(Mat m) : m_(std::move(m)) {
  if (m_.rows() == 0 || m_.rows() != m_.cols()) {
    throw DimensionMismatch("SymmetricPD: matrix must be square and non-empty");
  }
  const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
  if ((m_ - m_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw NotPositiveDefinite("SymmetricPD: matrix is not symmetric");
  }
  Eigen::LLT<Mat> llt(m_);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("SymmetricPD: Cholesky factorization failed");
  }
}

SymmetricPD SymmetricPD::identity(std::size_t dim) {
  const auto n = static_cast<Eigen::Index>(dim);
  return SymmetricPD(Mat::Identity(n, n));
}

namespace {

Eigen::LLT<Mat> factorize(const Mat& m) {
  if (m.rows() != m.cols()) throw DimensionMismatch("pd factorization: matrix not square");
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("pd factorization: Cholesky failed");
  }
  const auto diag = llt.matrixLLT().diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0) || !std::isfinite(diag(i))) {
      throw NotPositiveDefinite("pd factorization: non-positive pivot");
    }
  }
  return llt;
}

double logdet_from(const Eigen::LLT<Mat>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

InverseLogdet pd_inverse_logdet(const Mat& m) {
  const auto llt = factorize(m);
  const auto n = m.rows();
  Mat inv = llt.solve(Mat::Identity(n, n));
  return {symmetrized(inv), logdet_from(llt)};
}

InverseLogdet pd_inverse_logdet(const SymmetricPD& m) { return pd_inverse_logdet(m.matrix()); }

double pd_logdet(const Mat& m) { return logdet_from(factorize(m)); }

Vec softmax(const Vec& scores) {
  const double top = scores.maxCoeff();
  Vec w = (scores.array() - top).exp().matrix();
  return w / w.sum();
}

}  // namespace hemf
