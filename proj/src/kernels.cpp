#include "hemf/kernels.hpp"

#include <numeric>

#include "hemf/batch.hpp"

namespace hemf::kernels {

std::vector<std::uint32_t> all_entities(std::size_t n) {
  std::vector<std::uint32_t> out(n);
  std::iota(out.begin(), out.end(), 0u);
  return out;
}

std::vector<FactorPosterior> factor_phase_serial(Side side, const ModelState& state,
                                                 const SparseRatings& ratings,
                                                 std::span<const std::uint32_t> entities) {
  std::vector<FactorPosterior> out;
  out.reserve(entities.size());
  for (const auto i : entities) out.push_back(update_factor(side, i, state, ratings));
  return out;
}

std::vector<FactorPosterior> factor_phase_parallel(Side side, const ModelState& state,
                                                   const SparseRatings& ratings,
                                                   std::span<const std::uint32_t> entities) {
  std::vector<FactorPosterior> out(entities.size());
  parallel_for(entities.size(),
               [&](std::size_t k) { out[k] = update_factor(side, entities[k], state, ratings); });
  return out;
}

std::vector<MembershipPosterior> membership_phase_serial(Side side, const ModelState& state,
                                                         std::span<const std::uint32_t> entities) {
  std::vector<MembershipPosterior> out;
  out.reserve(entities.size());
  for (const auto i : entities) out.push_back(update_membership(side, i, state));
  return out;
}

std::vector<MembershipPosterior> membership_phase_parallel(Side side, const ModelState& state,
                                                           std::span<const std::uint32_t> entities) {
  std::vector<MembershipPosterior> out(entities.size());
  parallel_for(entities.size(),
               [&](std::size_t k) { out[k] = update_membership(side, entities[k], state); });
  return out;
}

}  // namespace hemf::kernels
