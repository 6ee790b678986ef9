#pragma once

#include <cstdint>
#include <vector>

#include "hemf/batch.hpp"
#include "hemf/online.hpp"
#include "hemf/rng.hpp"

namespace hemf {

/// Plain matrix factorization trained by stochastic gradient steps on
/// (r - a^T b)^2 / 2 + reg (|a|^2 + |b|^2) / 2, one step per entry, both vectors
/// updated from their pre-step values.
struct SgdModel {
  std::size_t latent_dim = 5;
  std::vector<Vec> user_factors;
  std::vector<Vec> item_factors;
  double lr0 = 0.01;     // initial step size
  double decay = 1e-4;   // step_t = lr0 / (1 + decay t)
  double reg = 0.02;
  std::uint64_t steps = 0;  // entries processed so far
  CounterRng rng;

  /// Entities drawn from N(0, 0.1 I) with the seeded generator.
  static SgdModel create(std::size_t n_users, std::size_t n_items, std::size_t latent_dim,
                         std::uint64_t seed);

  double step_size() const { return lr0 / (1.0 + decay * static_cast<double>(steps)); }
  /// 0 for entities never seen.
  double predict(std::size_t user, std::size_t item) const;
  void grow(std::size_t n_users, std::size_t n_items);
};

/// Throws NumericalError naming the entity when a factor norm exceeds 1e6.
void sgd_process_chunk(const RatingChunk& chunk, SgdModel& model);

/// fit_batch with a single community on each side.
FitResult fit_bpmf(const SparseRatings& ratings, const Hyperparameters& hyper, FitConfig config = {});

}  // namespace hemf
