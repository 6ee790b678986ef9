#pragma once

#include <cstdint>
#include <vector>

#include "hemf/model.hpp"

namespace hemf {

struct SyntheticData {
  SparseRatings ratings;
  std::vector<std::uint32_t> user_labels;
  std::vector<std::uint32_t> item_labels;
  Mat user_factors;  // L x U, column i is a_i
  Mat item_factors;  // L x M
  Vec user_weights;  // sampled stick weights, length d_true
  Vec item_weights;
};

/// Ancestral sampling from the truncated generative model: stick weights with the
/// last stick fixed at 1, Sigma_d ~ iW(W0, iota0), mu_d ~ N(base, lambda0 Sigma_d),
/// a_i ~ N(mu_{z_i}, Sigma_{z_i}), each pair observed with probability `density`,
/// r_ij ~ N(a_i^T b_j, sigma2).
SyntheticData sample_from_model(const Hyperparameters& hyper, std::size_t d_true,
                                std::size_t k_true, std::size_t n_users, std::size_t n_items,
                                double density, std::uint64_t seed);

}  // namespace hemf
