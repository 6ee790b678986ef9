#include "hemf/sampler.hpp"

#include <cmath>

#include "hemf/rng.hpp"

namespace hemf {

namespace {

Vec standard_normal(Eigen::Index n, CounterRng& rng) {
  Vec v(n);
  for (Eigen::Index k = 0; k < n; ++k) v(k) = rng.normal();
  return v;
}

// Bartlett decomposition: Lambda ~ Wishart(V, dof), returns Lambda^-1.
Mat sample_inverse_wishart(const Mat& W, double dof, CounterRng& rng) {
  const auto L = W.rows();
  const Mat C = Eigen::LLT<Mat>(W.inverse()).matrixL();
  Mat A = Mat::Zero(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    A(i, i) = std::sqrt(2.0 * rng.gamma(0.5 * (dof - static_cast<double>(i))));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  const Mat CA = C * A;
  return symmetrized((CA * CA.transpose()).inverse());
}

Vec sample_weights(std::size_t n, double concentration, CounterRng& rng) {
  Vec w(static_cast<Eigen::Index>(n));
  double rest = 1.0;
  for (std::size_t d = 0; d < n; ++d) {
    const double v = d + 1 == n ? 1.0 : rng.beta(1.0, concentration);
    w(static_cast<Eigen::Index>(d)) = rest * v;
    rest *= 1.0 - v;
  }
  return w;
}

std::uint32_t sample_categorical(const Vec& w, CounterRng& rng) {
  const double u = rng.uniform() * w.sum();
  double acc = 0.0;
  for (Eigen::Index d = 0; d < w.size(); ++d) {
    acc += w(d);
    if (u < acc) return static_cast<std::uint32_t>(d);
  }
  return static_cast<std::uint32_t>(w.size() - 1);
}

Mat sample_side(const Hyperparameters& hyper, Side side, std::size_t components, std::size_t count,
                Vec& weights, std::vector<std::uint32_t>& labels, CounterRng& rng) {
  const auto L = static_cast<Eigen::Index>(hyper.latent_dim);
  weights = sample_weights(components, hyper.concentration(side), rng);
  std::vector<Vec> means;
  std::vector<Mat> chol;
  for (std::size_t d = 0; d < components; ++d) {
    const Mat sigma = sample_inverse_wishart(hyper.W0, hyper.iota0, rng);
    const Mat c = Eigen::LLT<Mat>(sigma).matrixL();
    means.push_back(hyper.base_mean(side) + std::sqrt(hyper.lambda0) * c * standard_normal(L, rng));
    chol.push_back(c);
  }
  Mat factors(L, static_cast<Eigen::Index>(count));
  labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto z = sample_categorical(weights, rng);
    labels[i] = z;
    factors.col(static_cast<Eigen::Index>(i)) = means[z] + chol[z] * standard_normal(L, rng);
  }
  return factors;
}

}  // namespace

SyntheticData sample_from_model(const Hyperparameters& hyper, std::size_t d_true,
                                std::size_t k_true, std::size_t n_users, std::size_t n_items,
                                double density, std::uint64_t seed) {
  hyper.validate();
  if (!(density > 0.0 && density <= 1.0)) throw DomainError("density must lie in (0, 1]");
  if (d_true == 0 || k_true == 0) throw DomainError("component counts must be positive");
  CounterRng rng(seed);
  SyntheticData out;
  out.user_factors = sample_side(hyper, Side::user, d_true, n_users, out.user_weights,
                                 out.user_labels, rng);
  out.item_factors = sample_side(hyper, Side::item, k_true, n_items, out.item_weights,
                                 out.item_labels, rng);
  out.ratings = SparseRatings(n_users, n_items);
  const double sd = std::sqrt(hyper.sigma2);
  for (std::size_t u = 0; u < n_users; ++u) {
    for (std::size_t j = 0; j < n_items; ++j) {
      if (density < 1.0 && rng.uniform() >= density) continue;
      const double mean = out.user_factors.col(static_cast<Eigen::Index>(u))
                              .dot(out.item_factors.col(static_cast<Eigen::Index>(j)));
      out.ratings.add(static_cast<std::uint32_t>(u), static_cast<std::uint32_t>(j),
                      mean + sd * rng.normal());
    }
  }
  return out;
}

}  // namespace hemf
