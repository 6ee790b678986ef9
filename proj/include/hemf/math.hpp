#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "hemf/errors.hpp"

namespace hemf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Digamma function psi(x) for x > 0.
///
/// Shifts the argument upward with psi(x) = psi(x + 1) - 1/x until x >= 6,
/// then evaluates the asymptotic series through the x^-16 term.
/// Throws DomainError for x <= 0 or NaN.
double digamma(double x);

/// sum_{i=1..p} psi(x + (1 - i)/2); requires x > (p - 1)/2.
double multivariate_digamma(double x, std::size_t p);

/// ln Gamma_p(x) = p(p-1)/4 ln(pi) + sum_{i=1..p} ln Gamma(x + (1 - i)/2).
double log_multivariate_gamma(double x, std::size_t p);

double log_beta(double a, double b);

/// Dense symmetric positive-definite matrix. Construction validates symmetry
/// (1e-12 relative to the largest entry) and factorizability.
class SymmetricPD {
 public:
  explicit SymmetricPD(Mat m);

  static SymmetricPD identity(std::size_t dim);

  std::size_t dim() const { return static_cast<std::size_t>(m_.rows()); }
  const Mat& matrix() const { return m_; }

 private:
  Mat m_;
};

struct InverseLogdet {
  Mat inverse;
  double logdet;
};

/// Inverse and log-determinant via Cholesky. Throws NotPositiveDefinite when the
/// factorization fails; no jitter is added.
InverseLogdet pd_inverse_logdet(const Mat& m);
InverseLogdet pd_inverse_logdet(const SymmetricPD& m);

/// ln|m| via Cholesky; throws NotPositiveDefinite.
double pd_logdet(const Mat& m);

/// (m + m^T) / 2
inline Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// tr(A B) for same-shaped A, B^T.
inline double trace_product(const Mat& a, const Mat& b) {
  return a.cwiseProduct(b.transpose()).sum();
}

/// Softmax with max subtraction.
Vec softmax(const Vec& scores);

}  // namespace hemf
