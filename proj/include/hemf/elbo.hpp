#pragma once

#include "hemf/model.hpp"

namespace hemf {

/// Evidence lower bound split into its expected-log-joint and entropy pieces.
/// The variational family is q(a_i) q(z_i) q(v_d) q(mu_d) q(Sigma_d) on each side;
/// components beyond the truncation level sit at the prior and contribute zero.
struct ElboTerms {
  double likelihood = 0.0;        // E ln p(R | A, B, sigma2)
  double factor_prior = 0.0;      // E ln p(a_i | z_i, mu, Sigma), both sides
  double membership_prior = 0.0;  // E ln p(z_i | v)
  double stick_prior = 0.0;       // E ln p(v_d | alpha)
  double mean_prior = 0.0;        // E ln N(mu_d | mu0, lambda0 Sigma_d)
  double covariance_prior = 0.0;  // E ln iW(Sigma_d | W0, iota0)
  double factor_entropy = 0.0;
  double membership_entropy = 0.0;
  double stick_entropy = 0.0;
  double mean_entropy = 0.0;
  double covariance_entropy = 0.0;

  double total() const {
    return likelihood + factor_prior + membership_prior + stick_prior + mean_prior +
           covariance_prior + factor_entropy + membership_entropy + stick_entropy +
           mean_entropy + covariance_entropy;
  }
};

/// Throws NumericalError naming the offending term when anything is non-finite.
ElboTerms elbo_terms(const ModelState& state, const SparseRatings& ratings,
                     Exec exec = Exec::parallel);

double compute_elbo(const ModelState& state, const SparseRatings& ratings,
                    Exec exec = Exec::parallel);

/// sum_d [ln c + (c - 1) E ln(1 - v_d)], the stick prior for concentration c.
double stick_prior_terms(const StickPosterior& sticks, double concentration);

/// Sum over communities of E ln iW(Sigma_d | W0, iota0).
double covariance_prior_terms(const std::vector<CommunityPosterior>& communities, const Mat& W0,
                              double iota0);

/// Sum over communities of E ln N(mu_d | base, lambda0 Sigma_d).
double mean_prior_terms(const std::vector<CommunityPosterior>& communities, const Vec& base,
                        double lambda0);

/// sum_{(i,j)} E[(r_ij - a_i^T b_j)^2] over the given ratings.
double expected_squared_residual(const ModelState& state, std::span<const Rating> entries);

/// E[(a - mu_d)^T <Sigma_d^-1> (a - mu_d)] + <ln|Sigma_d|> for one factor/community pair.
double expected_mahalanobis(const FactorPosterior& f, const CommunityPosterior& c);

}  // namespace hemf
