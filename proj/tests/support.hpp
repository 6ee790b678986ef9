#pragma once

#include <cstdint>

#include "hemf/batch.hpp"
#include "hemf/math.hpp"
#include "hemf/model.hpp"
#include "hemf/ratings.hpp"
#include "hemf/rng.hpp"

namespace hemf::testing {

inline double max_abs(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return 1e300;
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

inline Mat random_pd(std::size_t n, CounterRng& rng, double ridge = 1.0) {
  const auto k = static_cast<Eigen::Index>(n);
  Mat a(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) a(i, j) = rng.normal();
  return symmetrized(a.transpose() * a + ridge * Mat::Identity(k, k));
}

/// Every user and item gets at least one rating; extra pairs with probability `density`.
inline SparseRatings random_ratings(std::size_t users, std::size_t items, double density,
                                    CounterRng& rng) {
  SparseRatings r(users, items);
  for (std::uint32_t u = 0; u < users; ++u) {
    for (std::uint32_t i = 0; i < items; ++i) {
      const bool forced = i == u % items || u == i % users;
      if (forced || rng.uniform() < density) r.add(u, i, 1.0 + 4.0 * rng.uniform());
    }
  }
  return r;
}

inline Hyperparameters small_hyper(std::size_t L) {
  auto h = Hyperparameters::defaults(L);
  h.sigma2 = 0.5;
  h.lambda0 = 2.0;
  return h;
}

/// Random ratings plus a state moved off the initial point by a few sweeps.
struct Instance {
  SparseRatings ratings;
  ModelState state;
};

inline Instance random_instance(std::uint64_t seed, std::size_t L = 3, std::size_t D = 3,
                                std::size_t K = 3, std::size_t sweeps = 2,
                                CommunityForm form = CommunityForm::conjugate) {
  CounterRng rng(seed);
  const std::size_t U = 5 + rng.below(20);
  const std::size_t M = 5 + rng.below(20);
  Instance inst;
  inst.ratings = random_ratings(U, M, 0.3, rng);
  auto h = small_hyper(L);
  h.alpha = 0.5 + 2.0 * rng.uniform();
  h.beta = 0.5 + 2.0 * rng.uniform();
  inst.state = init_state(inst.ratings, h, D, K, seed);
  // break the symmetry of the uniform initial memberships
  for (auto* side : {&inst.state.users, &inst.state.items}) {
    for (auto& m : side->memberships) {
      for (Eigen::Index d = 0; d < m.weights.size(); ++d) m.weights(d) = 0.1 + rng.uniform();
      m.weights /= m.weights.sum();
    }
  }
  for (const Side s : {Side::user, Side::item}) {
    stick_phase(s, inst.state);
    community_phase(s, inst.state, form);
  }
  SweepOptions opts{form, Exec::serial, true};
  for (std::size_t s = 0; s < sweeps; ++s) run_sweep(inst.state, inst.ratings, opts);
  return inst;
}

}  // namespace hemf::testing
