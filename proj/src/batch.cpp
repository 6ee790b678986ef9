#include "hemf/batch.hpp"

#include <cmath>
#include <string>

#include "hemf/elbo.hpp"
#include "hemf/empirical.hpp"
#include "hemf/kernels.hpp"

namespace hemf {

FactorEvidence factor_evidence(Side side, std::size_t entity, const ModelState& state,
                               const SparseRatings& ratings) {
  const auto L = static_cast<Eigen::Index>(state.hyper.latent_dim);
  const auto& other = state.side(opposite(side)).factors;
  FactorEvidence ev{Mat::Zero(L, L), Vec::Zero(L)};
  if (entity < ratings.count(side)) {
    for (const auto& n : ratings.neighbors(side, entity)) {
      ev.precision += other[n.index].second_moment;
      ev.linear += n.value * other[n.index].mean;
    }
  }
  const double inv_s2 = 1.0 / state.hyper.sigma2;
  ev.precision *= inv_s2;
  ev.linear *= inv_s2;
  return ev;
}

FactorPosterior solve_factor(const FactorEvidence& evidence, const MembershipPosterior& membership,
                             const std::vector<CommunityPosterior>& communities) {
  Mat precision = evidence.precision;
  Vec linear = evidence.linear;
  for (std::size_t d = 0; d < communities.size(); ++d) {
    const double q = membership.weights(static_cast<Eigen::Index>(d));
    if (q == 0.0) continue;
    precision += q * communities[d].exp_prec;
    linear += q * (communities[d].exp_prec * communities[d].mean);
  }
  const auto inv = pd_inverse_logdet(symmetrized(precision));
  Vec mean = inv.inverse * linear;
  return FactorPosterior::from_covariance(std::move(mean), inv.inverse);
}

FactorPosterior update_factor(Side side, std::size_t entity, const ModelState& state,
                              const SparseRatings& ratings) {
  const auto& own = state.side(side);
  if (entity >= own.size()) throw std::out_of_range("update_factor: entity index out of range");
  try {
    return solve_factor(factor_evidence(side, entity, state, ratings), own.memberships[entity],
                        own.communities);
  } catch (const NotPositiveDefinite& e) {
    throw NotPositiveDefinite(std::string("update_factor(") + side_name(side) + " " +
                              std::to_string(entity) + "): " + e.what());
  }
}

Vec membership_scores(const FactorPosterior& factor, const std::vector<CommunityPosterior>& comms,
                      const StickPosterior& sticks) {
  Vec gamma = sticks.expected_log_weights();
  for (std::size_t d = 0; d < comms.size(); ++d) {
    gamma(static_cast<Eigen::Index>(d)) += -0.5 * expected_mahalanobis(factor, comms[d]);
  }
  return gamma;
}

MembershipPosterior update_membership(Side side, std::size_t entity, const ModelState& state) {
  const auto& own = state.side(side);
  if (entity >= own.size()) throw std::out_of_range("update_membership: entity index out of range");
  return {softmax(membership_scores(own.factors[entity], own.communities, own.sticks))};
}

StickPosterior sticks_from_counts(const Vec& rho, double concentration) {
  const auto D = rho.size();
  StickPosterior s{Vec(D), Vec(D)};
  double tail = 0.0;
  for (Eigen::Index d = D - 1; d >= 0; --d) {
    s.eta1(d) = rho(d) + 1.0;
    s.eta2(d) = concentration + tail;
    tail += rho(d);
  }
  return s;
}

StickPosterior update_sticks(Side side, const ModelState& state) {
  const auto& own = state.side(side);
  Vec rho = Vec::Zero(static_cast<Eigen::Index>(own.n_components()));
  for (const auto& m : own.memberships) rho += m.weights;
  return sticks_from_counts(rho, state.hyper.concentration(side));
}

SufficientStats SufficientStats::zero(std::size_t latent_dim) {
  const auto L = static_cast<Eigen::Index>(latent_dim);
  return {0.0, Vec::Zero(L), Mat::Zero(L, L)};
}

SufficientStats& SufficientStats::operator+=(const SufficientStats& o) {
  count += o.count;
  sum_mean += o.sum_mean;
  sum_second += o.sum_second;
  return *this;
}

std::vector<SufficientStats> side_statistics(const SideState& side, std::size_t latent_dim) {
  std::vector<SufficientStats> stats(side.n_components(), SufficientStats::zero(latent_dim));
  for (std::size_t i = 0; i < side.size(); ++i) {
    const auto& f = side.factors[i];
    const auto& w = side.memberships[i].weights;
    for (std::size_t d = 0; d < stats.size(); ++d) {
      const double q = w(static_cast<Eigen::Index>(d));
      if (q == 0.0) continue;
      stats[d].count += q;
      stats[d].sum_mean += q * f.mean;
      stats[d].sum_second += q * f.second_moment;
    }
  }
  return stats;
}

CommunityPosterior community_from_stats(const SufficientStats& stats,
                                        const CommunityPosterior& current,
                                        const Hyperparameters& hyper, Side side,
                                        CommunityForm form) {
  const double lambda0 = hyper.lambda0;
  const double rho = stats.count;
  const Vec& base = hyper.base_mean(side);
  const Mat prev_cov = current.inverse_exp_prec();

  CommunityPosterior c;
  double mean_scale;
  if (form == CommunityForm::printed) {
    c.mean = (lambda0 / (lambda0 + rho)) * stats.sum_mean + (1.0 / (lambda0 + rho)) * base;
    mean_scale = lambda0 / (lambda0 + rho);
  } else {
    // q(mu_d) precision (rho + 1/lambda0) <Sigma_d^-1>
    c.mean = (lambda0 * stats.sum_mean + base) / (lambda0 * rho + 1.0);
    mean_scale = lambda0 / (lambda0 * rho + 1.0);
  }
  c.mean_outer = symmetrized(mean_scale * prev_cov + c.mean * c.mean.transpose());

  const Mat cross = c.mean * stats.sum_mean.transpose();
  const Mat base_cross = base * c.mean.transpose();
  c.W = stats.sum_second - cross - cross.transpose() + rho * c.mean_outer +
        (1.0 / lambda0) * (c.mean_outer - base_cross - base_cross.transpose() + base * base.transpose()) +
        hyper.W0;
  c.W = symmetrized(c.W);
  c.iota = hyper.iota0 + rho + (form == CommunityForm::conjugate ? 1.0 : 0.0);
  c.refresh();
  return c;
}

CommunityPosterior update_community(std::size_t d, Side side, const ModelState& state,
                                    CommunityForm form) {
  const auto& own = state.side(side);
  if (d >= own.n_components()) throw std::out_of_range("update_community: component out of range");
  const auto L = state.hyper.latent_dim;
  auto stats = SufficientStats::zero(L);
  for (std::size_t i = 0; i < own.size(); ++i) {
    const double q = own.memberships[i].weights(static_cast<Eigen::Index>(d));
    if (q == 0.0) continue;
    stats.count += q;
    stats.sum_mean += q * own.factors[i].mean;
    stats.sum_second += q * own.factors[i].second_moment;
  }
  return community_from_stats(stats, own.communities[d], state.hyper, side, form);
}

std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::factors: return "factors";
    case Phase::memberships: return "memberships";
    case Phase::sticks: return "sticks";
    case Phase::communities: return "communities";
  }
  return "?";
}

void factor_phase(Side side, ModelState& state, const SparseRatings& ratings, Exec exec) {
  const auto ids = kernels::all_entities(state.side(side).size());
  auto updated = exec == Exec::parallel ? kernels::factor_phase_parallel(side, state, ratings, ids)
                                        : kernels::factor_phase_serial(side, state, ratings, ids);
  state.side(side).factors = std::move(updated);
}

void membership_phase(Side side, ModelState& state, Exec exec) {
  const auto ids = kernels::all_entities(state.side(side).size());
  auto updated = exec == Exec::parallel ? kernels::membership_phase_parallel(side, state, ids)
                                        : kernels::membership_phase_serial(side, state, ids);
  state.side(side).memberships = std::move(updated);
}

void stick_phase(Side side, ModelState& state) {
  state.side(side).sticks = update_sticks(side, state);
}

void community_phase(Side side, ModelState& state, CommunityForm form) {
  auto& own = state.side(side);
  const auto stats = side_statistics(own, state.hyper.latent_dim);
  for (std::size_t d = 0; d < own.n_components(); ++d) {
    try {
      own.communities[d] = community_from_stats(stats[d], own.communities[d], state.hyper, side, form);
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite(std::string("community_phase(") + side_name(side) + " " +
                                std::to_string(d) + "): " + e.what());
    }
  }
}

void run_sweep(ModelState& state, const SparseRatings& ratings, const SweepOptions& opts,
               const PhaseObserver& observer) {
  for (const Side side : {Side::user, Side::item}) {
    factor_phase(side, state, ratings, opts.exec);
    if (observer) observer(side, Phase::factors, state);
    membership_phase(side, state, opts.exec);
    if (observer) observer(side, Phase::memberships, state);
    stick_phase(side, state);
    if (observer) observer(side, Phase::sticks, state);
    community_phase(side, state, opts.form);
    if (observer) observer(side, Phase::communities, state);
  }
  if (opts.record_elbo) state.elbo_trace.push_back(compute_elbo(state, ratings, opts.exec));
}

FitResult fit_batch_from(ModelState state, const SparseRatings& ratings, const FitConfig& config) {
  if (config.max_sweeps < 1) throw DomainError("fit_batch: max_sweeps must be at least 1");
  if (!(config.tolerance > 0.0)) throw DomainError("fit_batch: tolerance must be positive");
  FitResult result{std::move(state), false, 0};
  ModelState& s = result.state;
  const SweepOptions opts{config.form, config.exec, true};
  EvbOptions evb;
  evb.form = config.form;
  evb.exec = config.exec;
  double previous = s.elbo_trace.empty() ? compute_elbo(s, ratings, config.exec) : s.elbo_trace.back();
  for (std::size_t sweep = 0; sweep < config.max_sweeps; ++sweep) {
    run_sweep(s, ratings, opts);
    if (config.empirical) run_evb_pass(s, ratings, evb);
    ++result.sweeps;
    if (config.on_sweep) config.on_sweep(sweep, s);
    const double current = s.elbo_trace.back();
    if (std::abs(current - previous) < config.tolerance * std::abs(current)) {
      result.converged = true;
      break;
    }
    previous = current;
  }
  return result;
}

FitResult fit_batch(const SparseRatings& ratings, const Hyperparameters& hyper,
                    const FitConfig& config) {
  return fit_batch_from(init_state(ratings, hyper, config.d_init, config.k_init, config.seed),
                        ratings, config);
}

}  // namespace hemf
