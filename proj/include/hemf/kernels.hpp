#pragma once

#include <cstdint>
#include <exception>
#include <span>
#include <vector>

#include "hemf/model.hpp"

namespace hemf::kernels {

// Per-entity phases. Every entity's update reads only the opposite side, its
// own membership and the (frozen) communities and sticks, so entities are
// independent within a phase. The serial versions are the reference; the
// OpenMP versions must produce bit-identical output for any thread count.

std::vector<FactorPosterior> factor_phase_serial(Side side, const ModelState& state,
                                                 const SparseRatings& ratings,
                                                 std::span<const std::uint32_t> entities);
std::vector<FactorPosterior> factor_phase_parallel(Side side, const ModelState& state,
                                                   const SparseRatings& ratings,
                                                   std::span<const std::uint32_t> entities);

std::vector<MembershipPosterior> membership_phase_serial(Side side, const ModelState& state,
                                                         std::span<const std::uint32_t> entities);
std::vector<MembershipPosterior> membership_phase_parallel(Side side, const ModelState& state,
                                                           std::span<const std::uint32_t> entities);

/// Runs body(k) for k in [0, n) across OpenMP threads; the first exception is
/// rethrown on the calling thread once the loop finishes.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  std::exception_ptr error;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t k = 0; k < count; ++k) {
    try {
      body(static_cast<std::size_t>(k));
    } catch (...) {
#pragma omp critical(hemf_kernel_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

/// 0, 1, ..., n - 1
std::vector<std::uint32_t> all_entities(std::size_t n);

}  // namespace hemf::kernels
