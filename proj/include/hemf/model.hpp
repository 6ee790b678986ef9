#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "hemf/math.hpp"
#include "hemf/ratings.hpp"

namespace hemf {

/// Which closed form the community (and base-mean) updates use.
///
/// printed:   the published updates verbatim, mean weight 1/(lambda0 + rho) on
///            mu0, iota_d = iota0 + rho_d, arithmetic-mean mu0.
/// conjugate: exact coordinate-ascent maximizers of the implemented ELBO under
///            the prior mu_d ~ N(mu0, lambda0 Sigma_d): iota_d = iota0 + rho_d + 1
///            and a precision-weighted mu0.
enum class CommunityForm { printed, conjugate };

enum class Exec { serial, parallel };

struct Hyperparameters {
  std::size_t latent_dim = 5;
  Vec mu0;  // user-side base mean
  Vec nu0;  // item-side base mean
  double lambda0 = 1.0;
  Mat W0;
  double iota0 = 7.0;
  double alpha = 1.0;
  double beta = 1.0;
  double sigma2 = 1.0;
  double eps_spawn = 1e-3;  // odds threshold for spawning a new component
  double merge_tau = 0.1;   // symmetric-KL threshold for merging two components
  double lr_alpha = 1e-3;
  double lr_iota = 1e-3;

  /// Zero base means, W0 = I, iota0 = L + 2.
  static Hyperparameters defaults(std::size_t latent_dim);

  /// Throws DomainError / DimensionMismatch when a constraint is violated.
  void validate() const;

  const Vec& base_mean(Side s) const { return s == Side::user ? mu0 : nu0; }
  Vec& base_mean(Side s) { return s == Side::user ? mu0 : nu0; }
  double concentration(Side s) const { return s == Side::user ? alpha : beta; }
  double& concentration(Side s) { return s == Side::user ? alpha : beta; }
};

/// Gaussian posterior over a_i or b_j, stored as first and second moments.
struct FactorPosterior {
  Vec mean;
  Mat second_moment;

  Mat covariance() const { return second_moment - mean * mean.transpose(); }
  static FactorPosterior from_covariance(Vec mean, const Mat& covariance);
};

struct MembershipPosterior {
  Vec weights;
};

/// Beta(eta1_d, eta2_d) posteriors over the stick-breaking proportions.
struct StickPosterior {
  Vec eta1;
  Vec eta2;

  std::size_t size() const { return static_cast<std::size_t>(eta1.size()); }
  double expected_log_v(std::size_t d) const;
  double expected_log_1mv(std::size_t d) const;
  /// E[ln pi_d] = E ln v_d + sum_{j<d} E ln(1 - v_j), one entry per component.
  Vec expected_log_weights() const;
};

/// Normal / inverse-Wishart posterior for one community: q(mu_d) q(Sigma_d).
struct CommunityPosterior {
  Vec mean;        // <mu_d>
  Mat mean_outer;  // <mu_d mu_d^T>
  Mat W;
  double iota = 0.0;
  // caches, consistent with (W, iota) after refresh()
  Mat exp_prec;             // <Sigma_d^-1> = iota W^-1
  double exp_logdet = 0.0;  // <ln|Sigma_d|> = ln|W| - psi_L(iota/2) - L ln 2

  void refresh();
  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  /// <Sigma_d^-1>^-1 = W / iota
  Mat inverse_exp_prec() const { return W / iota; }

  /// Prior community: mean = base mean, W = W0, iota = iota0,
  /// <mu mu^T> = base base^T + lambda0 W0 / iota0.
  static CommunityPosterior prior(const Hyperparameters& hyper, Side side);
};

/// Expected log-determinant of an inverse-Wishart(W, iota) draw.
double expected_logdet_inverse_wishart(const Mat& W, double iota);

struct SideState {
  std::vector<FactorPosterior> factors;
  std::vector<MembershipPosterior> memberships;
  StickPosterior sticks;
  std::vector<CommunityPosterior> communities;

  std::size_t size() const { return factors.size(); }
  std::size_t n_components() const { return communities.size(); }
  /// Throws DimensionMismatch when list lengths or widths disagree.
  void check_consistent() const;
};

struct ModelState {
  SideState users;
  SideState items;
  Hyperparameters hyper;
  std::vector<double> elbo_trace;

  SideState& side(Side s) { return s == Side::user ? users : items; }
  const SideState& side(Side s) const { return s == Side::user ? users : items; }

  /// Users and items exchanged, with mu0/nu0 and alpha/beta swapped.
  ModelState swapped_sides() const;
};

/// Factor means ~ N(0, 0.1 I) from the seeded counter generator, second moments
/// mean mean^T + 0.1 I, uniform memberships, sticks and communities at the prior.
ModelState init_state(const SparseRatings& ratings, const Hyperparameters& hyper,
                      std::size_t d_init, std::size_t k_init, std::uint64_t seed);

/// Appends one prior community to a side: sticks (1, concentration), memberships
/// padded with zero weight.
void append_prior_community(SideState& side, const Hyperparameters& hyper, Side which);

struct RatingRange {
  double lo;
  double hi;
};

/// <a_user>^T <b_item>, optionally clamped. Throws std::out_of_range.
double predict_entry(const ModelState& state, std::size_t user, std::size_t item,
                     std::optional<RatingRange> clamp = std::nullopt);

}  // namespace hemf
