#include "hemf/baselines.hpp"

#include <cmath>
#include <string>

namespace hemf {

namespace {

Vec draw_factor(std::size_t L, CounterRng& rng) {
  Vec v(static_cast<Eigen::Index>(L));
  const double sd = std::sqrt(0.1);
  for (Eigen::Index l = 0; l < v.size(); ++l) v(l) = sd * rng.normal();
  return v;
}

}  // namespace

SgdModel SgdModel::create(std::size_t n_users, std::size_t n_items, std::size_t latent_dim,
                          std::uint64_t seed) {
  if (latent_dim == 0) throw DomainError("latent dimension must be positive");
  SgdModel m;
  m.latent_dim = latent_dim;
  m.rng = CounterRng(seed);
  m.grow(n_users, n_items);
  return m;
}

void SgdModel::grow(std::size_t n_users, std::size_t n_items) {
  while (user_factors.size() < n_users) user_factors.push_back(draw_factor(latent_dim, rng));
  while (item_factors.size() < n_items) item_factors.push_back(draw_factor(latent_dim, rng));
}

double SgdModel::predict(std::size_t user, std::size_t item) const {
  if (user >= user_factors.size() || item >= item_factors.size()) return 0.0;
  return user_factors[user].dot(item_factors[item]);
}

void sgd_process_chunk(const RatingChunk& chunk, SgdModel& model) {
  if (!(model.lr0 >= 0.0) || !(model.decay >= 0.0) || !(model.reg >= 0.0)) {
    throw DomainError("sgd: step schedule and regularization must be non-negative");
  }
  for (const auto& e : chunk.entries) {
    model.grow(e.user + std::size_t{1}, e.item + std::size_t{1});
    Vec& a = model.user_factors[e.user];
    Vec& b = model.item_factors[e.item];
    const double eps = model.step_size();
    const double err = e.value - a.dot(b);
    const Vec a_old = a;
    a += eps * (err * b - model.reg * a);
    b += eps * (err * a_old - model.reg * b);
    ++model.steps;
    if (!(a.norm() <= 1e6)) throw NumericalError("sgd diverged at user " + std::to_string(e.user));
    if (!(b.norm() <= 1e6)) throw NumericalError("sgd diverged at item " + std::to_string(e.item));
  }
}

FitResult fit_bpmf(const SparseRatings& ratings, const Hyperparameters& hyper, FitConfig config) {
  config.d_init = 1;
  config.k_init = 1;
  return fit_batch(ratings, hyper, config);
}

}  // namespace hemf
