#pragma once

#include <optional>
#include <span>
#include <utility>

#include "hemf/model.hpp"

namespace hemf {

inline constexpr double kSigma2Floor = 1e-8;
inline constexpr double kLambda0Floor = 1e-8;
inline constexpr double kConcentrationMin = 1e-4;
inline constexpr double kConcentrationMax = 1e4;

/// Mean expected squared residual over the ratings, floored. Throws DataError when empty.
double update_sigma2(const ModelState& state, const SparseRatings& ratings);

/// Streaming form: |Omega| / |Omega u Omega'| sigma2 + residual(Omega') / |Omega u Omega'|.
/// `n_before` and `n_after` count distinct observed pairs before and after the chunk.
double update_sigma2_online(const ModelState& state, std::span<const Rating> chunk,
                            std::size_t n_before, std::size_t n_after);

/// d/dc of the stick prior terms: D / c + sum_d E ln(1 - v_d).
double concentration_gradient(const StickPosterior& sticks, double concentration);

/// One clamped ascent step on alpha (user side) or beta (item side).
double update_concentration(Side side, const ModelState& state);

/// printed: arithmetic mean of the community means.
/// conjugate: (sum_d <Sigma_d^-1>)^-1 sum_d <Sigma_d^-1> <mu_d>.
std::pair<Vec, Vec> update_base_means(const ModelState& state,
                                      CommunityForm form = CommunityForm::printed);

/// sum over both sides of tr(<Sigma^-1> E[(mu - base)(mu - base)^T]) / (L (D + K)), floored.
double update_lambda0(const ModelState& state);

/// d/d iota0 of the covariance prior terms of both sides.
double iota0_gradient(const ModelState& state, const Mat& W0, double iota0);

/// W0 = (D + K) iota0 (sum <Sigma^-1>)^-1 at the current iota0, then one clamped
/// ascent step on iota0 at the new W0.
std::pair<Mat, double> update_wishart_hypers(const ModelState& state);

struct EvbOptions {
  CommunityForm form = CommunityForm::printed;
  Exec exec = Exec::parallel;
  bool record_elbo = true;
  /// When set, sigma2 uses the streaming form over this chunk.
  struct Online {
    std::span<const Rating> chunk;
    std::size_t n_before = 0;
    std::size_t n_after = 0;
  };
  std::optional<Online> online;
};

/// sigma2, alpha/beta, mu0/nu0, lambda0, W0/iota0 in that order; appends the ELBO
/// to elbo_trace when record_elbo is set.
void run_evb_pass(ModelState& state, const SparseRatings& ratings, const EvbOptions& opts = {});

}  // namespace hemf
