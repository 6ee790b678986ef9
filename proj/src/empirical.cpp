#include "hemf/empirical.hpp"

#include <algorithm>
#include <cmath>

#include "hemf/elbo.hpp"

namespace hemf {

double update_sigma2(const ModelState& state, const SparseRatings& ratings) {
  if (ratings.empty()) throw DataError("update_sigma2: no observed entries");
  const double s = expected_squared_residual(state, ratings.entries());
  return std::max(s / static_cast<double>(ratings.size()), kSigma2Floor);
}

double update_sigma2_online(const ModelState& state, std::span<const Rating> chunk,
                            std::size_t n_before, std::size_t n_after) {
  if (n_after == 0) throw DataError("update_sigma2: no observed entries");
  if (chunk.empty()) return state.hyper.sigma2;
  const double total = static_cast<double>(n_after);
  const double s = static_cast<double>(n_before) / total * state.hyper.sigma2 +
                   expected_squared_residual(state, chunk) / total;
  return std::max(s, kSigma2Floor);
}

double concentration_gradient(const StickPosterior& sticks, double concentration) {
  double g = static_cast<double>(sticks.size()) / concentration;
  for (std::size_t d = 0; d < sticks.size(); ++d) g += sticks.expected_log_1mv(d);
  return g;
}

double update_concentration(Side side, const ModelState& state) {
  const double c = state.hyper.concentration(side);
  const double lr = state.hyper.lr_alpha;
  if (lr == 0.0) return c;
  const double next = c + lr * concentration_gradient(state.side(side).sticks, c);
  return std::clamp(next, kConcentrationMin, kConcentrationMax);
}

namespace {

Vec base_mean_for(const std::vector<CommunityPosterior>& comms, const Vec& current,
                  CommunityForm form) {
  if (comms.empty()) return current;
  if (form == CommunityForm::printed) {
    Vec sum = Vec::Zero(current.size());
    for (const auto& c : comms) sum += c.mean;
    return sum / static_cast<double>(comms.size());
  }
  Mat prec = Mat::Zero(current.size(), current.size());
  Vec weighted = Vec::Zero(current.size());
  for (const auto& c : comms) {
    prec += c.exp_prec;
    weighted += c.exp_prec * c.mean;
  }
  return pd_inverse_logdet(symmetrized(prec)).inverse * weighted;
}

double dispersion(const std::vector<CommunityPosterior>& comms, const Vec& base) {
  double s = 0.0;
  for (const auto& c : comms) {
    s += trace_product(c.mean_outer, c.exp_prec) - 2.0 * base.dot(c.exp_prec * c.mean) +
         base.dot(c.exp_prec * base);
  }
  return s;
}

}  // namespace

std::pair<Vec, Vec> update_base_means(const ModelState& state, CommunityForm form) {
  return {base_mean_for(state.users.communities, state.hyper.mu0, form),
          base_mean_for(state.items.communities, state.hyper.nu0, form)};
}

double update_lambda0(const ModelState& state) {
  const std::size_t n = state.users.n_components() + state.items.n_components();
  if (n == 0) return state.hyper.lambda0;
  const double s = dispersion(state.users.communities, state.hyper.mu0) +
                   dispersion(state.items.communities, state.hyper.nu0);
  return std::max(s / (static_cast<double>(state.hyper.latent_dim) * static_cast<double>(n)),
                  kLambda0Floor);
}

double iota0_gradient(const ModelState& state, const Mat& W0, double iota0) {
  const std::size_t L = state.hyper.latent_dim;
  const double per_component = 0.5 * pd_logdet(W0) - 0.5 * static_cast<double>(L) * std::log(2.0) -
                               0.5 * multivariate_digamma(0.5 * iota0, L);
  double g = 0.0;
  for (const auto* side : {&state.users, &state.items}) {
    for (const auto& c : side->communities) g += per_component - 0.5 * c.exp_logdet;
  }
  return g;
}

std::pair<Mat, double> update_wishart_hypers(const ModelState& state) {
  const auto& h = state.hyper;
  const std::size_t n = state.users.n_components() + state.items.n_components();
  if (n == 0) return {h.W0, h.iota0};
  const auto L = static_cast<Eigen::Index>(h.latent_dim);
  Mat prec = Mat::Zero(L, L);
  for (const auto* side : {&state.users, &state.items}) {
    for (const auto& c : side->communities) prec += c.exp_prec;
  }
  Mat W0 = symmetrized(static_cast<double>(n) * h.iota0 *
                       pd_inverse_logdet(symmetrized(prec)).inverse);
  double iota0 = h.iota0;
  if (h.lr_iota != 0.0) {
    iota0 += h.lr_iota * iota0_gradient(state, W0, h.iota0);
    iota0 = std::max(iota0, static_cast<double>(h.latent_dim) - 1.0 + 1e-6);
  }
  return {std::move(W0), iota0};
}

void run_evb_pass(ModelState& state, const SparseRatings& ratings, const EvbOptions& opts) {
  auto& h = state.hyper;
  if (opts.online) {
    h.sigma2 = update_sigma2_online(state, opts.online->chunk, opts.online->n_before,
                                    opts.online->n_after);
  } else {
    h.sigma2 = update_sigma2(state, ratings);
  }
  const double alpha = update_concentration(Side::user, state);
  const double beta = update_concentration(Side::item, state);
  h.alpha = alpha;
  h.beta = beta;
  auto [mu0, nu0] = update_base_means(state, opts.form);
  h.mu0 = std::move(mu0);
  h.nu0 = std::move(nu0);
  h.lambda0 = update_lambda0(state);
  auto [W0, iota0] = update_wishart_hypers(state);
  h.W0 = std::move(W0);
  h.iota0 = iota0;
  if (opts.record_elbo) state.elbo_trace.push_back(compute_elbo(state, ratings, opts.exec));
}

}  // namespace hemf
