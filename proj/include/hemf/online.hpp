#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "hemf/batch.hpp"
#include "hemf/model.hpp"
#include "hemf/rng.hpp"

namespace hemf {

enum class EntryKind : std::uint8_t { fresh, revision };

struct ChunkEntry {
  std::uint32_t user;
  std::uint32_t item;
  double value;
  EntryKind kind = EntryKind::fresh;
  double previous = 0.0;  // r^t for revisions
};

struct RatingChunk {
  std::vector<ChunkEntry> entries;

  bool empty() const { return entries.empty(); }
  std::size_t size() const { return entries.size(); }
};

/// How the community and stick posteriors absorb a chunk.
///
/// recomputed: running sufficient statistics are shifted by the deltas and the
///             batch closed forms are re-evaluated from them.
/// printed:    the published incremental recurrences on eta, <mu>, <mu mu^T>, W, iota.
enum class GlobalsMode { recomputed, printed };

struct OnlineConfig {
  GlobalsMode globals = GlobalsMode::recomputed;
  CommunityForm form = CommunityForm::printed;
  Exec exec = Exec::parallel;
  bool spawn = true;
  bool merge = true;
  std::size_t propagation_sweeps = 0;
};

/// Membership-weighted changes of one side's sufficient statistics over the
/// touched entities; entities without absorbed ratings count as q^t = 0.
struct SideDeltas {
  Vec theta1;                 // per component: sum q^{t+1} - q^t
  std::vector<Vec> theta2;    // sum q^{t+1} <a>^{t+1} - q^t <a>^t
  std::vector<Mat> theta3;    // sum q^{t+1} <a a^T>^{t+1} - q^t <a a^T>^t
  Vec touched_mean_before;    // sum over touched entities of <a>^t
  Vec touched_mean_after;     // sum over touched entities of <a>^{t+1}

  static SideDeltas zero(std::size_t components, std::size_t latent_dim);
  std::size_t size() const { return static_cast<std::size_t>(theta1.size()); }
  bool component_is_zero(std::size_t d) const;
  /// Appends zero components up to `components`.
  void pad(std::size_t components);
};

/// Running state of the streaming fold.
struct OnlineState {
  ModelState model;
  SparseRatings absorbed;                   // every rating seen so far, current values
  std::vector<std::uint8_t> user_seen;      // entity contributes to the statistics
  std::vector<std::uint8_t> item_seen;
  std::vector<SufficientStats> user_stats;  // over seen entities
  std::vector<SufficientStats> item_stats;
  CounterRng rng;                           // initial factors of new entities
  std::uint64_t chunks = 0;

  std::vector<std::uint8_t>& seen(Side s) { return s == Side::user ? user_seen : item_seen; }
  const std::vector<std::uint8_t>& seen(Side s) const {
    return s == Side::user ? user_seen : item_seen;
  }
  std::vector<SufficientStats>& stats(Side s) { return s == Side::user ? user_stats : item_stats; }
  const std::vector<SufficientStats>& stats(Side s) const {
    return s == Side::user ? user_stats : item_stats;
  }
};

/// Nothing absorbed yet: every existing entity unseen, statistics zero.
OnlineState start_online(ModelState initial, std::uint64_t seed);

/// Continues from a model already fitted to `ratings`: entities with ratings are seen
/// and the statistics are recomputed from the current memberships.
OnlineState resume_online(ModelState fitted, const SparseRatings& ratings, std::uint64_t seed);

/// Ratings of one entity within a chunk, seen from that entity's side.
struct LocalEntry {
  std::uint32_t other;
  double value;
  EntryKind kind;
  double previous;
};

/// Rank update of a seen entity's posterior:
///   Delta1 = sum_new r <b> + sum_rev (r - r_prev) <b>, Delta2 = sum_new <b b^T>,
///   Sigma' = Sigma - Sigma (sigma2 I + Delta2 Sigma)^-1 Delta2 Sigma,
///   m'     = x - Sigma (sigma2 I + Delta2 Sigma)^-1 Delta2 x,  x = m + Sigma Delta1 / sigma2.
/// Unseen entities are solved with the batch formula over the chunk-local ratings.
/// An empty entry list returns the current posterior unchanged.
FactorPosterior online_update_factor(Side side, std::size_t entity,
                                     std::span<const LocalEntry> entries, bool seen,
                                     const ModelState& state);

/// Membership update with the spawn rule: a prior-initialized candidate component is
/// scored and appended when gamma(D+1) - max_d gamma(d) > ln(eps_spawn). Appending pads
/// every membership, the sticks and `stats`.
struct MembershipUpdate {
  MembershipPosterior membership;
  bool spawned = false;
};
MembershipUpdate online_update_membership(Side side, std::size_t entity, ModelState& state,
                                          std::vector<SufficientStats>& stats, bool allow_spawn);

/// One entity's contribution to its side's statistics; absent when the entity has
/// not absorbed any rating (q^t = 0).
struct Contribution {
  bool present = false;
  Vec weights;
  Vec mean;
  Mat second;
};

std::vector<Contribution> snapshot_contributions(const SideState& side,
                                                 std::span<const std::uint32_t> entities,
                                                 std::span<const std::uint8_t> seen);

/// theta over paired before/after contributions; short weight vectors are zero-padded
/// to `components`.
SideDeltas accumulate_deltas(std::span<const Contribution> before,
                             std::span<const Contribution> after, std::size_t components,
                             std::size_t latent_dim);

/// Applies the deltas to sticks and communities; components with all-zero deltas are
/// left untouched. `stats` is shifted by the deltas in both modes.
void online_update_globals(const SideDeltas& deltas, Side side, ModelState& state,
                           std::vector<SufficientStats>& stats, const OnlineConfig& config);

/// Symmetric KL between N(<mu>, W / (iota - L - 1)) of two communities
/// (W / iota when iota <= L + 1).
double community_divergence(const CommunityPosterior& a, const CommunityPosterior& b);

/// Repeatedly merges the closest pair below merge_tau; returns the number of merges.
std::size_t merge_communities(Side side, ModelState& state, std::vector<SufficientStats>& stats,
                              const OnlineConfig& config);

/// One step of the streaming fold: factors, memberships (with spawning), deltas and
/// globals on the user side, then the item side, then optional propagation sweeps
/// over the touched neighbourhood and a merge pass. Throws DataError for a chunk that
/// duplicates an absorbed pair or revises a missing one.
void process_chunk(const RatingChunk& chunk, OnlineState& state, const OnlineConfig& config);

/// Fixed-size chunks of `entries` in order, all fresh.
std::vector<RatingChunk> make_chunks(std::span<const Rating> entries, std::size_t chunk_size);

}  // namespace hemf
