#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>

#include "hemf/model.hpp"

namespace hemf {

// ---- single-entity updates (user-side notation; the item side is symmetric) ----

/// Likelihood contribution sigma^-2 sum <b b^T> and sigma^-2 sum r <b> for one entity.
struct FactorEvidence {
  Mat precision;
  Vec linear;
};

FactorEvidence factor_evidence(Side side, std::size_t entity, const ModelState& state,
                               const SparseRatings& ratings);

/// Combines evidence with the membership-weighted community prior and inverts:
/// C = (evidence + sum_d q(d) <Sigma_d^-1>)^-1, mean = C (linear + sum_d q(d) <Sigma_d^-1><mu_d>).
FactorPosterior solve_factor(const FactorEvidence& evidence, const MembershipPosterior& membership,
                             const std::vector<CommunityPosterior>& communities);

FactorPosterior update_factor(Side side, std::size_t entity, const ModelState& state,
                              const SparseRatings& ratings);

/// gamma(d) = -1/2 E[(a - mu_d)^T Sigma_d^-1 (a - mu_d) + ln|Sigma_d|] + E ln pi_d
/// (constants shared across d dropped).
Vec membership_scores(const FactorPosterior& factor, const std::vector<CommunityPosterior>& comms,
                      const StickPosterior& sticks);

MembershipPosterior update_membership(Side side, std::size_t entity, const ModelState& state);

/// eta1_d = rho_d + 1, eta2_d = c + sum_{j>d} rho_j
StickPosterior sticks_from_counts(const Vec& rho, double concentration);
StickPosterior update_sticks(Side side, const ModelState& state);

/// Membership-weighted sufficient statistics of one community.
struct SufficientStats {
  double count = 0.0;  // rho_d
  Vec sum_mean;        // sum_i q_i(d) <a_i>
  Mat sum_second;      // sum_i q_i(d) <a_i a_i^T>

  static SufficientStats zero(std::size_t latent_dim);
  SufficientStats& operator+=(const SufficientStats& o);
};

std::vector<SufficientStats> side_statistics(const SideState& side, std::size_t latent_dim);

/// Community posterior from sufficient statistics. The mean uses the cached
/// <Sigma_d^-1> of `current`, then (W_d, iota_d) use the new mean moments.
CommunityPosterior community_from_stats(const SufficientStats& stats,
                                        const CommunityPosterior& current,
                                        const Hyperparameters& hyper, Side side,
                                        CommunityForm form);

CommunityPosterior update_community(std::size_t d, Side side, const ModelState& state,
                                    CommunityForm form = CommunityForm::printed);

// ---- phases and sweeps ----

enum class Phase { factors, memberships, sticks, communities };
std::string_view phase_name(Phase p);

void factor_phase(Side side, ModelState& state, const SparseRatings& ratings, Exec exec);
void membership_phase(Side side, ModelState& state, Exec exec);
void stick_phase(Side side, ModelState& state);
void community_phase(Side side, ModelState& state, CommunityForm form);

struct SweepOptions {
  CommunityForm form = CommunityForm::printed;
  Exec exec = Exec::parallel;
  bool record_elbo = true;
};

using PhaseObserver = std::function<void(Side, Phase, const ModelState&)>;

/// factors, memberships, sticks, communities on the user side, then the item side;
/// appends the ELBO to elbo_trace when record_elbo is set.
void run_sweep(ModelState& state, const SparseRatings& ratings, const SweepOptions& opts = {},
               const PhaseObserver& observer = {});

struct FitConfig {
  std::size_t d_init = 3;
  std::size_t k_init = 3;
  std::uint64_t seed = 1;
  std::size_t max_sweeps = 200;
  double tolerance = 1e-6;  // relative ELBO change
  CommunityForm form = CommunityForm::printed;
  Exec exec = Exec::parallel;
  bool empirical = false;  // interleave one eVB pass after every sweep
  /// Called after every sweep (and eVB pass) with the sweep index.
  std::function<void(std::size_t, const ModelState&)> on_sweep;
};

struct FitResult {
  ModelState state;
  bool converged = false;
  std::size_t sweeps = 0;
};

/// Throws DomainError on an invalid config. Non-convergence is reported, not thrown.
FitResult fit_batch(const SparseRatings& ratings, const Hyperparameters& hyper,
                    const FitConfig& config);

/// Same loop, starting from a caller-supplied state.
FitResult fit_batch_from(ModelState state, const SparseRatings& ratings, const FitConfig& config);

}  // namespace hemf
