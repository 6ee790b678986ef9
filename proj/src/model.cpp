#include "hemf/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "hemf/rng.hpp"

namespace hemf {

Hyperparameters Hyperparameters::defaults(std::size_t latent_dim) {
  Hyperparameters h;
  const auto L = static_cast<Eigen::Index>(latent_dim);
  h.latent_dim = latent_dim;
  h.mu0 = Vec::Zero(L);
  h.nu0 = Vec::Zero(L);
  h.W0 = Mat::Identity(L, L);
  h.iota0 = static_cast<double>(latent_dim) + 2.0;
  return h;
}

void Hyperparameters::validate() const {
  const auto L = static_cast<Eigen::Index>(latent_dim);
  if (latent_dim == 0) throw DomainError("latent dimension must be positive");
  if (mu0.size() != L || nu0.size() != L) {
    throw DimensionMismatch("base mean length differs from latent dimension");
  }
  if (W0.rows() != L || W0.cols() != L) throw DimensionMismatch("W0 must be L x L");
  SymmetricPD{W0};
  if (!(sigma2 > 0.0)) throw DomainError("sigma2 must be positive");
  if (!(lambda0 > 0.0)) throw DomainError("lambda0 must be positive");
  if (!(iota0 > static_cast<double>(latent_dim) - 1.0)) throw DomainError("iota0 must exceed L - 1");
  if (!(alpha > 0.0) || !(beta > 0.0)) throw DomainError("concentrations must be positive");
  if (!(eps_spawn > 0.0)) throw DomainError("eps_spawn must be positive");
  if (!(merge_tau > 0.0)) throw DomainError("merge_tau must be positive");
  if (lr_alpha < 0.0 || lr_iota < 0.0) throw DomainError("learning rates must be non-negative");
}

FactorPosterior FactorPosterior::from_covariance(Vec mean, const Mat& covariance) {
  Mat second = covariance + mean * mean.transpose();
  return {std::move(mean), std::move(second)};
}

double StickPosterior::expected_log_v(std::size_t d) const {
  const auto i = static_cast<Eigen::Index>(d);
  return digamma(eta1(i)) - digamma(eta1(i) + eta2(i));
}

double StickPosterior::expected_log_1mv(std::size_t d) const {
  const auto i = static_cast<Eigen::Index>(d);
  return digamma(eta2(i)) - digamma(eta1(i) + eta2(i));
}

Vec StickPosterior::expected_log_weights() const {
  const std::size_t D = size();
  Vec out(static_cast<Eigen::Index>(D));
  double tail = 0.0;
  for (std::size_t d = 0; d < D; ++d) {
    out(static_cast<Eigen::Index>(d)) = expected_log_v(d) + tail;
    tail += expected_log_1mv(d);
  }
  return out;
}

double expected_logdet_inverse_wishart(const Mat& W, double iota) {
  const std::size_t L = static_cast<std::size_t>(W.rows());
  return pd_logdet(W) - multivariate_digamma(0.5 * iota, L) -
         static_cast<double>(L) * std::log(2.0);
}

void CommunityPosterior::refresh() {
  const auto inv = pd_inverse_logdet(W);
  exp_prec = iota * inv.inverse;
  const std::size_t L = static_cast<std::size_t>(W.rows());
  exp_logdet = inv.logdet - multivariate_digamma(0.5 * iota, L) -
               static_cast<double>(L) * std::log(2.0);
}

CommunityPosterior CommunityPosterior::prior(const Hyperparameters& hyper, Side side) {
  CommunityPosterior c;
  c.mean = hyper.base_mean(side);
  c.W = hyper.W0;
  c.iota = hyper.iota0;
  c.mean_outer = c.mean * c.mean.transpose() + hyper.lambda0 * hyper.W0 / hyper.iota0;
  c.refresh();
  return c;
}

void SideState::check_consistent() const {
  if (memberships.size() != factors.size()) {
    throw DimensionMismatch("membership count differs from factor count");
  }
  const auto D = static_cast<Eigen::Index>(communities.size());
  if (sticks.eta1.size() != D || sticks.eta2.size() != D) {
    throw DimensionMismatch("stick length differs from component count");
  }
  for (const auto& m : memberships) {
    if (m.weights.size() != D) throw DimensionMismatch("membership width differs from D");
  }
}

ModelState ModelState::swapped_sides() const {
  ModelState s;
  s.users = items;
  s.items = users;
  s.hyper = hyper;
  std::swap(s.hyper.mu0, s.hyper.nu0);
  std::swap(s.hyper.alpha, s.hyper.beta);
  s.elbo_trace = elbo_trace;
  return s;
}

namespace {

SideState init_side(std::size_t count, std::size_t components, const Hyperparameters& hyper,
                    Side side, CounterRng& rng) {
  const auto L = static_cast<Eigen::Index>(hyper.latent_dim);
  const auto D = static_cast<Eigen::Index>(components);
  SideState s;
  s.factors.reserve(count);
  const double sd = std::sqrt(0.1);
  for (std::size_t i = 0; i < count; ++i) {
    Vec m(L);
    for (Eigen::Index l = 0; l < L; ++l) m(l) = sd * rng.normal();
    s.factors.push_back(FactorPosterior::from_covariance(std::move(m), 0.1 * Mat::Identity(L, L)));
  }
  s.memberships.assign(count, MembershipPosterior{Vec::Constant(D, 1.0 / static_cast<double>(D))});
  s.sticks.eta1 = Vec::Ones(D);
  s.sticks.eta2 = Vec::Constant(D, hyper.concentration(side));
  s.communities.assign(components, CommunityPosterior::prior(hyper, side));
  return s;
}

}  // namespace

ModelState init_state(const SparseRatings& ratings, const Hyperparameters& hyper,
                      std::size_t d_init, std::size_t k_init, std::uint64_t seed) {
  if (d_init == 0 || k_init == 0) throw DomainError("d_init and k_init must be at least 1");
  hyper.validate();
  CounterRng rng(seed);
  ModelState state;
  state.hyper = hyper;
  state.users = init_side(ratings.n_users(), d_init, hyper, Side::user, rng);
  state.items = init_side(ratings.n_items(), k_init, hyper, Side::item, rng);
  return state;
}

void append_prior_community(SideState& side, const Hyperparameters& hyper, Side which) {
  const auto D = side.sticks.eta1.size();
  side.sticks.eta1.conservativeResize(D + 1);
  side.sticks.eta2.conservativeResize(D + 1);
  side.sticks.eta1(D) = 1.0;
  side.sticks.eta2(D) = hyper.concentration(which);
  side.communities.push_back(CommunityPosterior::prior(hyper, which));
  for (auto& m : side.memberships) {
    m.weights.conservativeResize(D + 1);
    m.weights(D) = 0.0;
  }
}

double predict_entry(const ModelState& state, std::size_t user, std::size_t item,
                     std::optional<RatingRange> clamp) {
  if (user >= state.users.size()) throw std::out_of_range("predict_entry: user index out of range");
  if (item >= state.items.size()) throw std::out_of_range("predict_entry: item index out of range");
  const double raw = state.users.factors[user].mean.dot(state.items.factors[item].mean);
  if (clamp) return std::clamp(raw, clamp->lo, clamp->hi);
  return raw;
}

}  // namespace hemf
