#include "hemf/elbo.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace hemf {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericalError(std::string("elbo: non-finite term '") + term + "'");
}

struct EntityTerms {
  double factor_prior = 0.0;
  double membership_prior = 0.0;
  double factor_entropy = 0.0;
  double membership_entropy = 0.0;
};

EntityTerms entity_terms(const FactorPosterior& f, const MembershipPosterior& m,
                         const std::vector<CommunityPosterior>& comms, const Vec& log_weights) {
  const double L = static_cast<double>(f.mean.size());
  EntityTerms t;
  for (std::size_t d = 0; d < comms.size(); ++d) {
    const double q = m.weights(static_cast<Eigen::Index>(d));
    if (q == 0.0) continue;
    t.factor_prior += q * (-0.5 * L * kLog2Pi - 0.5 * expected_mahalanobis(f, comms[d]));
    t.membership_prior += q * log_weights(static_cast<Eigen::Index>(d));
    t.membership_entropy -= q * std::log(q);
  }
  t.factor_entropy = 0.5 * (L * (kLog2Pi + 1.0) + pd_logdet(f.covariance()));
  return t;
}

double stick_entropy(const StickPosterior& s) {
  double h = 0.0;
  for (std::size_t d = 0; d < s.size(); ++d) {
    const double a = s.eta1(static_cast<Eigen::Index>(d));
    const double b = s.eta2(static_cast<Eigen::Index>(d));
    h += log_beta(a, b) - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) +
         (a + b - 2.0) * digamma(a + b);
  }
  return h;
}

double inverse_wishart_entropy(const CommunityPosterior& c) {
  const std::size_t L = c.dim();
  const double Ld = static_cast<double>(L);
  const double expected_log_density = 0.5 * c.iota * pd_logdet(c.W) -
                                      0.5 * c.iota * Ld * std::log(2.0) -
                                      log_multivariate_gamma(0.5 * c.iota, L) -
                                      0.5 * (c.iota + Ld + 1.0) * c.exp_logdet - 0.5 * c.iota * Ld;
  return -expected_log_density;
}

void add_side(const SideState& side, Exec exec, ElboTerms& out) {
  const Vec log_weights = side.sticks.expected_log_weights();
  const auto n = static_cast<std::ptrdiff_t>(side.size());
  std::vector<EntityTerms> parts(side.size());
  bool failed = false;
  std::string failure;
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      parts[i] = entity_terms(side.factors[i], side.memberships[i], side.communities, log_weights);
    } catch (const std::exception& e) {
#pragma omp critical(hemf_elbo_error)
      {
        failed = true;
        failure = e.what();
      }
    }
  }
  if (failed) throw NumericalError("elbo: factor entropy failed: " + failure);
  for (const auto& p : parts) {
    out.factor_prior += p.factor_prior;
    out.membership_prior += p.membership_prior;
    out.factor_entropy += p.factor_entropy;
    out.membership_entropy += p.membership_entropy;
  }
  out.stick_entropy += stick_entropy(side.sticks);
  for (const auto& c : side.communities) {
    const double L = static_cast<double>(c.dim());
    out.mean_entropy += 0.5 * (L * (kLog2Pi + 1.0) + pd_logdet(c.mean_outer - c.mean * c.mean.transpose()));
    out.covariance_entropy += inverse_wishart_entropy(c);
  }
}

}  // namespace

double expected_mahalanobis(const FactorPosterior& f, const CommunityPosterior& c) {
  return trace_product(c.exp_prec, f.second_moment) - 2.0 * c.mean.dot(c.exp_prec * f.mean) +
         trace_product(c.exp_prec, c.mean_outer) + c.exp_logdet;
}

double stick_prior_terms(const StickPosterior& sticks, double concentration) {
  double s = 0.0;
  for (std::size_t d = 0; d < sticks.size(); ++d) {
    s += std::log(concentration) + (concentration - 1.0) * sticks.expected_log_1mv(d);
  }
  return s;
}

double covariance_prior_terms(const std::vector<CommunityPosterior>& communities, const Mat& W0,
                              double iota0) {
  if (communities.empty()) return 0.0;
  const std::size_t L = static_cast<std::size_t>(W0.rows());
  const double Ld = static_cast<double>(L);
  const double norm = 0.5 * iota0 * pd_logdet(W0) - 0.5 * iota0 * Ld * std::log(2.0) -
                      log_multivariate_gamma(0.5 * iota0, L);
  double s = 0.0;
  for (const auto& c : communities) {
    s += norm - 0.5 * (iota0 + Ld + 1.0) * c.exp_logdet - 0.5 * trace_product(W0, c.exp_prec);
  }
  return s;
}

double mean_prior_terms(const std::vector<CommunityPosterior>& communities, const Vec& base,
                        double lambda0) {
  double s = 0.0;
  for (const auto& c : communities) {
    const double L = static_cast<double>(c.dim());
    const Mat spread = c.mean_outer - base * c.mean.transpose() - c.mean * base.transpose() +
                       base * base.transpose();
    s += -0.5 * L * (kLog2Pi + std::log(lambda0)) - 0.5 * c.exp_logdet -
         0.5 / lambda0 * trace_product(c.exp_prec, spread);
  }
  return s;
}

double expected_squared_residual(const ModelState& state, std::span<const Rating> entries) {
  double s = 0.0;
  for (const auto& e : entries) {
    const auto& a = state.users.factors[e.user];
    const auto& b = state.items.factors[e.item];
    s += e.value * e.value - 2.0 * e.value * a.mean.dot(b.mean) +
         trace_product(a.second_moment, b.second_moment);
  }
  return s;
}

ElboTerms elbo_terms(const ModelState& state, const SparseRatings& ratings, Exec exec) {
  const auto& h = state.hyper;
  ElboTerms t;
  const double n = static_cast<double>(ratings.size());
  t.likelihood = -0.5 * n * (kLog2Pi + std::log(h.sigma2)) -
                 0.5 / h.sigma2 * expected_squared_residual(state, ratings.entries());
  add_side(state.users, exec, t);
  add_side(state.items, exec, t);
  t.stick_prior = stick_prior_terms(state.users.sticks, h.alpha) +
                  stick_prior_terms(state.items.sticks, h.beta);
  t.mean_prior = mean_prior_terms(state.users.communities, h.mu0, h.lambda0) +
                 mean_prior_terms(state.items.communities, h.nu0, h.lambda0);
  t.covariance_prior = covariance_prior_terms(state.users.communities, h.W0, h.iota0) +
                       covariance_prior_terms(state.items.communities, h.W0, h.iota0);

  require_finite(t.likelihood, "likelihood");
  require_finite(t.factor_prior, "factor_prior");
  require_finite(t.membership_prior, "membership_prior");
  require_finite(t.stick_prior, "stick_prior");
  require_finite(t.mean_prior, "mean_prior");
  require_finite(t.covariance_prior, "covariance_prior");
  require_finite(t.factor_entropy, "factor_entropy");
  require_finite(t.membership_entropy, "membership_entropy");
  require_finite(t.stick_entropy, "stick_entropy");
  require_finite(t.mean_entropy, "mean_entropy");
  require_finite(t.covariance_entropy, "covariance_entropy");
  return t;
}

double compute_elbo(const ModelState& state, const SparseRatings& ratings, Exec exec) {
  return elbo_terms(state, ratings, exec).total();
}

}  // namespace hemf
