#include "hemf/online.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "hemf/elbo.hpp"
#include "hemf/kernels.hpp"

namespace hemf {

SideDeltas SideDeltas::zero(std::size_t components, std::size_t latent_dim) {
  const auto L = static_cast<Eigen::Index>(latent_dim);
  SideDeltas d;
  d.theta1 = Vec::Zero(static_cast<Eigen::Index>(components));
  d.theta2.assign(components, Vec::Zero(L));
  d.theta3.assign(components, Mat::Zero(L, L));
  d.touched_mean_before = Vec::Zero(L);
  d.touched_mean_after = Vec::Zero(L);
  return d;
}

bool SideDeltas::component_is_zero(std::size_t d) const {
  return theta1(static_cast<Eigen::Index>(d)) == 0.0 && theta2[d].isZero(0.0) &&
         theta3[d].isZero(0.0);
}

void SideDeltas::pad(std::size_t components) {
  const auto old = theta1.size();
  const auto D = static_cast<Eigen::Index>(components);
  if (D <= old) return;
  const auto L = touched_mean_before.size();
  theta1.conservativeResize(D);
  theta1.tail(D - old).setZero();
  theta2.resize(components, Vec::Zero(L));
  theta3.resize(components, Mat::Zero(L, L));
}

namespace {

void grow_side(OnlineState& s, Side side, std::size_t count) {
  auto& own = s.model.side(side);
  auto& seen = s.seen(side);
  const auto L = static_cast<Eigen::Index>(s.model.hyper.latent_dim);
  const auto D = static_cast<Eigen::Index>(own.n_components());
  const double sd = std::sqrt(0.1);
  while (own.size() < count) {
    Vec m(L);
    for (Eigen::Index l = 0; l < L; ++l) m(l) = sd * s.rng.normal();
    own.factors.push_back(FactorPosterior::from_covariance(std::move(m), 0.1 * Mat::Identity(L, L)));
    own.memberships.push_back({Vec::Constant(D, 1.0 / static_cast<double>(D))});
  }
  seen.resize(own.size(), 0);
}

void append_component(Side side, ModelState& state, std::vector<SufficientStats>& stats) {
  append_prior_community(state.side(side), state.hyper, side);
  stats.push_back(SufficientStats::zero(state.hyper.latent_dim));
}

Vec erase_entry(const Vec& v, Eigen::Index k) {
  Vec out(v.size() - 1);
  out.head(k) = v.head(k);
  out.tail(v.size() - k - 1) = v.tail(v.size() - k - 1);
  return out;
}

Vec stat_counts(const std::vector<SufficientStats>& stats) {
  Vec rho(static_cast<Eigen::Index>(stats.size()));
  for (std::size_t d = 0; d < stats.size(); ++d) rho(static_cast<Eigen::Index>(d)) = stats[d].count;
  return rho;
}

std::string context(Side side, std::size_t entity) {
  return std::string(side_name(side)) + " " + std::to_string(entity);
}

}  // namespace

OnlineState start_online(ModelState initial, std::uint64_t seed) {
  initial.users.check_consistent();
  initial.items.check_consistent();
  OnlineState s;
  const auto L = initial.hyper.latent_dim;
  s.absorbed = SparseRatings(initial.users.size(), initial.items.size());
  s.user_seen.assign(initial.users.size(), 0);
  s.item_seen.assign(initial.items.size(), 0);
  s.user_stats.assign(initial.users.n_components(), SufficientStats::zero(L));
  s.item_stats.assign(initial.items.n_components(), SufficientStats::zero(L));
  s.model = std::move(initial);
  s.rng = CounterRng(seed);
  return s;
}

OnlineState resume_online(ModelState fitted, const SparseRatings& ratings, std::uint64_t seed) {
  if (fitted.users.size() != ratings.n_users() || fitted.items.size() != ratings.n_items()) {
    throw DimensionMismatch("resume_online: state and ratings disagree on entity counts");
  }
  OnlineState s = start_online(std::move(fitted), seed);
  s.absorbed = ratings;
  std::fill(s.user_seen.begin(), s.user_seen.end(), 1);
  std::fill(s.item_seen.begin(), s.item_seen.end(), 1);
  s.user_stats = side_statistics(s.model.users, s.model.hyper.latent_dim);
  s.item_stats = side_statistics(s.model.items, s.model.hyper.latent_dim);
  return s;
}

FactorPosterior online_update_factor(Side side, std::size_t entity,
                                     std::span<const LocalEntry> entries, bool seen,
                                     const ModelState& state) {
  const auto& own = state.side(side);
  if (entity >= own.size()) throw std::out_of_range("online_update_factor: entity out of range");
  const auto& current = own.factors[entity];
  if (entries.empty()) return current;
  const auto& other = state.side(opposite(side)).factors;
  const double s2 = state.hyper.sigma2;
  const auto L = static_cast<Eigen::Index>(state.hyper.latent_dim);

  if (!seen) {
    FactorEvidence ev{Mat::Zero(L, L), Vec::Zero(L)};
    for (const auto& e : entries) {
      ev.precision += other[e.other].second_moment;
      ev.linear += e.value * other[e.other].mean;
    }
    ev.precision /= s2;
    ev.linear /= s2;
    return solve_factor(ev, own.memberships[entity], own.communities);
  }

  Vec delta1 = Vec::Zero(L);
  Mat delta2 = Mat::Zero(L, L);
  for (const auto& e : entries) {
    if (e.kind == EntryKind::fresh) {
      delta1 += e.value * other[e.other].mean;
      delta2 += other[e.other].second_moment;
    } else {
      delta1 += (e.value - e.previous) * other[e.other].mean;
    }
  }
  const Mat sigma = current.covariance();
  const Mat system = s2 * Mat::Identity(L, L) + delta2 * sigma;
  const Eigen::FullPivLU<Mat> lu(system);
  if (!lu.isInvertible()) {
    throw NotPositiveDefinite("online_update_factor: singular rank-update system");
  }
  const Mat gain = sigma * lu.solve(delta2);
  const Vec x = current.mean + sigma * delta1 / s2;
  Vec mean = x - gain * x;
  const Mat cov = symmetrized(sigma - gain * sigma);
  return FactorPosterior::from_covariance(std::move(mean), cov);
}

MembershipUpdate online_update_membership(Side side, std::size_t entity, ModelState& state,
                                          std::vector<SufficientStats>& stats, bool allow_spawn) {
  auto& own = state.side(side);
  if (entity >= own.size()) throw std::out_of_range("online_update_membership: entity out of range");
  const auto& f = own.factors[entity];
  Vec gamma = membership_scores(f, own.communities, own.sticks);
  if (!allow_spawn) return {{softmax(gamma)}, false};

  const double c = state.hyper.concentration(side);
  double tail = digamma(1.0) - digamma(1.0 + c);
  for (std::size_t d = 0; d < own.sticks.size(); ++d) tail += own.sticks.expected_log_1mv(d);
  const auto candidate = CommunityPosterior::prior(state.hyper, side);
  const double score = tail - 0.5 * expected_mahalanobis(f, candidate);
  const double best = gamma.size() > 0 ? gamma.maxCoeff() : -std::numeric_limits<double>::infinity();
  if (!(score - best > std::log(state.hyper.eps_spawn))) return {{softmax(gamma)}, false};

  append_component(side, state, stats);
  gamma.conservativeResize(gamma.size() + 1);
  gamma(gamma.size() - 1) = score;
  return {{softmax(gamma)}, true};
}

std::vector<Contribution> snapshot_contributions(const SideState& side,
                                                 std::span<const std::uint32_t> entities,
                                                 std::span<const std::uint8_t> seen) {
  std::vector<Contribution> out(entities.size());
  for (std::size_t k = 0; k < entities.size(); ++k) {
    const auto i = entities[k];
    if (i >= side.size() || i >= seen.size() || !seen[i]) continue;
    out[k] = {true, side.memberships[i].weights, side.factors[i].mean, side.factors[i].second_moment};
  }
  return out;
}

SideDeltas accumulate_deltas(std::span<const Contribution> before,
                             std::span<const Contribution> after, std::size_t components,
                             std::size_t latent_dim) {
  if (before.size() != after.size()) {
    throw DimensionMismatch("accumulate_deltas: before/after lengths differ");
  }
  SideDeltas out = SideDeltas::zero(components, latent_dim);
  auto add = [&](const Contribution& c, double sign) {
    if (!c.present) return;
    if (static_cast<std::size_t>(c.weights.size()) > components) {
      throw DimensionMismatch("accumulate_deltas: membership wider than component count");
    }
    for (Eigen::Index d = 0; d < c.weights.size(); ++d) {
      const double q = c.weights(d);
      if (q == 0.0) continue;
      out.theta1(d) += sign * q;
      out.theta2[d] += (sign * q) * c.mean;
      out.theta3[d] += (sign * q) * c.second;
    }
  };
  for (std::size_t k = 0; k < before.size(); ++k) {
    add(before[k], -1.0);
    add(after[k], 1.0);
    if (before[k].present) out.touched_mean_before += before[k].mean;
    if (after[k].present) out.touched_mean_after += after[k].mean;
  }
  return out;
}

namespace {

void printed_globals(const SideDeltas& deltas, Side side, ModelState& state,
                     std::vector<SufficientStats>& stats) {
  auto& own = state.side(side);
  const auto& h = state.hyper;
  const double lambda0 = h.lambda0;
  const Vec& base = h.base_mean(side);
  const double U = static_cast<double>(own.size());
  const auto D = own.n_components();

  double tail = 0.0;
  for (std::size_t d = D; d-- > 0;) {
    const auto k = static_cast<Eigen::Index>(d);
    own.sticks.eta1(k) += deltas.theta1(k);
    own.sticks.eta2(k) += tail;
    tail += deltas.theta1(k);
  }

  for (std::size_t d = 0; d < D; ++d) {
    if (deltas.component_is_zero(d)) continue;
    const auto k = static_cast<Eigen::Index>(d);
    auto& c = own.communities[d];
    const double theta1 = deltas.theta1(k);
    const double rho = stats[d].count + theta1;

    const Vec mean = c.mean - (theta1 * c.mean - lambda0 * deltas.theta2[d]) / (lambda0 + rho);
    const Mat mean_outer =
        symmetrized(lambda0 / (lambda0 + rho) * c.inverse_exp_prec() + mean * mean.transpose());
    const Vec theta4 = mean - c.mean;
    const Mat theta5 = mean_outer - c.mean_outer;
    const Mat theta6 = mean * deltas.touched_mean_after.transpose() -
                       c.mean * deltas.touched_mean_before.transpose();

    Mat W = c.W - symmetrized((2.0 / lambda0) * base * theta4.transpose() + 2.0 * theta6) +
            (U + 1.0 / lambda0) * theta5 + deltas.theta3[d];
    c.mean = mean;
    c.mean_outer = mean_outer;
    c.W = symmetrized(W);
    c.iota += theta1;
    try {
      c.refresh();
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite(std::string("online globals (printed) ") + side_name(side) +
                                " component " + std::to_string(d) + ": " + e.what());
    }
  }
}

}  // namespace

void online_update_globals(const SideDeltas& deltas_in, Side side, ModelState& state,
                           std::vector<SufficientStats>& stats, const OnlineConfig& config) {
  auto& own = state.side(side);
  const auto D = own.n_components();
  if (deltas_in.size() > D || stats.size() != D) {
    throw DimensionMismatch("online_update_globals: deltas or statistics do not match D");
  }
  SideDeltas deltas = deltas_in;
  deltas.pad(D);
  bool any = false;
  for (std::size_t d = 0; d < D; ++d) any = any || !deltas.component_is_zero(d);
  if (!any) return;

  if (config.globals == GlobalsMode::printed) printed_globals(deltas, side, state, stats);

  for (std::size_t d = 0; d < D; ++d) {
    const auto k = static_cast<Eigen::Index>(d);
    stats[d].count += deltas.theta1(k);
    stats[d].sum_mean += deltas.theta2[d];
    stats[d].sum_second += deltas.theta3[d];
  }
  if (config.globals == GlobalsMode::printed) return;

  own.sticks = sticks_from_counts(stat_counts(stats), state.hyper.concentration(side));
  for (std::size_t d = 0; d < D; ++d) {
    if (deltas.component_is_zero(d)) continue;
    try {
      own.communities[d] = community_from_stats(stats[d], own.communities[d], state.hyper, side,
                                                config.form);
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite(std::string("online globals ") + side_name(side) + " component " +
                                std::to_string(d) + ": " + e.what());
    }
  }
}

double community_divergence(const CommunityPosterior& a, const CommunityPosterior& b) {
  const double L = static_cast<double>(a.dim());
  auto covariance = [L](const CommunityPosterior& c) -> Mat {
    const double dof = c.iota - L - 1.0;
    return dof > 0.0 ? Mat(c.W / dof) : Mat(c.W / c.iota);
  };
  const Mat Sa = covariance(a);
  const Mat Sb = covariance(b);
  const Mat Pa = pd_inverse_logdet(Sa).inverse;
  const Mat Pb = pd_inverse_logdet(Sb).inverse;
  const Vec diff = a.mean - b.mean;
  return 0.5 * (trace_product(Pb, Sa) + trace_product(Pa, Sb) - 2.0 * L +
                diff.dot((Pa + Pb) * diff));
}

std::size_t merge_communities(Side side, ModelState& state, std::vector<SufficientStats>& stats,
                              const OnlineConfig& config) {
  auto& own = state.side(side);
  if (stats.size() != own.n_components()) {
    throw DimensionMismatch("merge_communities: statistics do not match D");
  }
  std::size_t merges = 0;
  while (own.n_components() >= 2) {
    const auto D = own.n_components();
    double best = std::numeric_limits<double>::infinity();
    std::size_t keep = 0, drop = 0;
    for (std::size_t a = 0; a < D; ++a) {
      for (std::size_t b = a + 1; b < D; ++b) {
        const double kl = community_divergence(own.communities[a], own.communities[b]);
        if (kl < best) {
          best = kl;
          keep = a;
          drop = b;
        }
      }
    }
    if (!(best < state.hyper.merge_tau)) break;

    const auto kd = static_cast<Eigen::Index>(drop);
    for (auto& m : own.memberships) {
      m.weights(static_cast<Eigen::Index>(keep)) += m.weights(kd);
      m.weights = erase_entry(m.weights, kd);
    }
    stats[keep] += stats[drop];
    stats.erase(stats.begin() + static_cast<std::ptrdiff_t>(drop));
    own.communities.erase(own.communities.begin() + static_cast<std::ptrdiff_t>(drop));
    own.communities[keep] =
        community_from_stats(stats[keep], own.communities[keep], state.hyper, side, config.form);
    own.sticks = sticks_from_counts(stat_counts(stats), state.hyper.concentration(side));
    ++merges;
  }
  return merges;
}

namespace {

struct TouchedSide {
  std::vector<std::uint32_t> entities;          // sorted
  std::vector<std::vector<LocalEntry>> entries;  // parallel to entities
};

TouchedSide collect(const RatingChunk& chunk, Side side) {
  TouchedSide t;
  for (const auto& e : chunk.entries) t.entities.push_back(side == Side::user ? e.user : e.item);
  std::sort(t.entities.begin(), t.entities.end());
  t.entities.erase(std::unique(t.entities.begin(), t.entities.end()), t.entities.end());
  t.entries.resize(t.entities.size());
  for (const auto& e : chunk.entries) {
    const auto self = side == Side::user ? e.user : e.item;
    const auto other = side == Side::user ? e.item : e.user;
    const auto pos = std::lower_bound(t.entities.begin(), t.entities.end(), self) - t.entities.begin();
    t.entries[static_cast<std::size_t>(pos)].push_back({other, e.value, e.kind, e.previous});
  }
  return t;
}

// Membership updates over `entities` followed by the delta/global step.
void finish_side(Side side, OnlineState& s, std::span<const std::uint32_t> entities,
                 const std::vector<Contribution>& before, bool allow_spawn,
                 const OnlineConfig& config, std::span<const std::uint8_t> seen_after) {
  auto& model = s.model;
  auto& stats = s.stats(side);
  if (allow_spawn) {
    for (const auto i : entities) {
      auto upd = online_update_membership(side, i, model, stats, true);
      model.side(side).memberships[i] = std::move(upd.membership);
    }
  } else {
    std::vector<MembershipPosterior> updated(entities.size());
    kernels::parallel_for(entities.size(), [&](std::size_t k) {
      updated[k] = update_membership(side, entities[k], model);
    });
    for (std::size_t k = 0; k < entities.size(); ++k) {
      model.side(side).memberships[entities[k]] = std::move(updated[k]);
    }
  }
  const auto after = snapshot_contributions(model.side(side), entities, seen_after);
  const auto deltas =
      accumulate_deltas(before, after, model.side(side).n_components(), model.hyper.latent_dim);
  online_update_globals(deltas, side, model, stats, config);
}

void chunk_side(Side side, OnlineState& s, const TouchedSide& touched, const OnlineConfig& config) {
  auto& model = s.model;
  const auto& ids = touched.entities;
  const auto& seen = s.seen(side);
  const auto before = snapshot_contributions(model.side(side), ids, seen);

  std::vector<FactorPosterior> factors(ids.size());
  const auto body = [&](std::size_t k) {
    try {
      factors[k] = online_update_factor(side, ids[k], touched.entries[k], seen[ids[k]] != 0, model);
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite("process_chunk: " + context(side, ids[k]) + ": " + e.what());
    }
  };
  if (config.exec == Exec::parallel) {
    kernels::parallel_for(ids.size(), body);
  } else {
    for (std::size_t k = 0; k < ids.size(); ++k) body(k);
  }
  for (std::size_t k = 0; k < ids.size(); ++k) model.side(side).factors[ids[k]] = std::move(factors[k]);

  // every touched entity contributes from now on
  std::vector<std::uint8_t> seen_after(seen.begin(), seen.end());
  for (const auto i : ids) seen_after[i] = 1;
  finish_side(side, s, ids, before, config.spawn, config, seen_after);
}

std::vector<std::uint32_t> neighbourhood(Side side, const std::vector<std::uint32_t>& own,
                                         const std::vector<std::uint32_t>& other_touched,
                                         const SparseRatings& absorbed) {
  std::vector<std::uint32_t> out(own);
  for (const auto j : other_touched) {
    for (const auto& n : absorbed.neighbors(opposite(side), j)) out.push_back(n.index);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void propagation_sweep(Side side, OnlineState& s, std::span<const std::uint32_t> ids,
                       const OnlineConfig& config) {
  auto& model = s.model;
  const auto& seen = s.seen(side);
  const auto before = snapshot_contributions(model.side(side), ids, seen);
  auto factors = config.exec == Exec::parallel
                     ? kernels::factor_phase_parallel(side, model, s.absorbed, ids)
                     : kernels::factor_phase_serial(side, model, s.absorbed, ids);
  for (std::size_t k = 0; k < ids.size(); ++k) model.side(side).factors[ids[k]] = std::move(factors[k]);
  finish_side(side, s, ids, before, false, config, seen);
}

void validate_chunk(const RatingChunk& chunk, const SparseRatings& absorbed) {
  std::unordered_set<std::uint64_t> keys;
  for (std::size_t k = 0; k < chunk.entries.size(); ++k) {
    const auto& e = chunk.entries[k];
    const auto key = (static_cast<std::uint64_t>(e.user) << 32) | e.item;
    if (!keys.insert(key).second) {
      throw DataError("chunk entry " + std::to_string(k) + ": pair (" + std::to_string(e.user) +
                      ", " + std::to_string(e.item) + ") repeated within the chunk");
    }
    if (!std::isfinite(e.value)) {
      throw DataError("chunk entry " + std::to_string(k) + ": non-finite rating");
    }
    const bool known = e.user < absorbed.n_users() && e.item < absorbed.n_items() &&
                       absorbed.find(e.user, e.item).has_value();
    if (e.kind == EntryKind::fresh && known) {
      throw DataError("chunk entry " + std::to_string(k) + ": pair (" + std::to_string(e.user) +
                      ", " + std::to_string(e.item) + ") already observed");
    }
    if (e.kind == EntryKind::revision) {
      if (!known) {
        throw DataError("chunk entry " + std::to_string(k) + ": revision of unobserved pair (" +
                        std::to_string(e.user) + ", " + std::to_string(e.item) + ")");
      }
      const double stored = *absorbed.find(e.user, e.item);
      if (std::abs(stored - e.previous) > 1e-9 * std::max(1.0, std::abs(stored))) {
        throw DataError("chunk entry " + std::to_string(k) + ": previous rating " +
                        std::to_string(e.previous) + " differs from stored " + std::to_string(stored));
      }
    }
  }
}

}  // namespace

void process_chunk(const RatingChunk& chunk, OnlineState& s, const OnlineConfig& config) {
  if (chunk.empty()) return;
  validate_chunk(chunk, s.absorbed);

  std::size_t n_users = s.model.users.size(), n_items = s.model.items.size();
  for (const auto& e : chunk.entries) {
    n_users = std::max<std::size_t>(n_users, e.user + std::size_t{1});
    n_items = std::max<std::size_t>(n_items, e.item + std::size_t{1});
  }
  grow_side(s, Side::user, n_users);
  grow_side(s, Side::item, n_items);
  s.absorbed.resize(n_users, n_items);

  const auto users = collect(chunk, Side::user);
  chunk_side(Side::user, s, users, config);
  const auto items = collect(chunk, Side::item);
  chunk_side(Side::item, s, items, config);

  for (const auto& e : chunk.entries) {
    if (e.kind == EntryKind::fresh) {
      s.absorbed.add(e.user, e.item, e.value);
    } else {
      s.absorbed.revise(e.user, e.item, e.value);
    }
  }
  for (const auto i : users.entities) s.user_seen[i] = 1;
  for (const auto j : items.entities) s.item_seen[j] = 1;

  if (config.propagation_sweeps > 0) {
    const auto user_hood = neighbourhood(Side::user, users.entities, items.entities, s.absorbed);
    const auto item_hood = neighbourhood(Side::item, items.entities, users.entities, s.absorbed);
    for (std::size_t sweep = 0; sweep < config.propagation_sweeps; ++sweep) {
      propagation_sweep(Side::user, s, user_hood, config);
      propagation_sweep(Side::item, s, item_hood, config);
    }
  }

  if (config.merge) {
    merge_communities(Side::user, s.model, s.user_stats, config);
    merge_communities(Side::item, s.model, s.item_stats, config);
  }
  ++s.chunks;
}

std::vector<RatingChunk> make_chunks(std::span<const Rating> entries, std::size_t chunk_size) {
  if (chunk_size == 0) throw DomainError("chunk size must be at least 1");
  std::vector<RatingChunk> out;
  for (std::size_t start = 0; start < entries.size(); start += chunk_size) {
    RatingChunk c;
    const auto end = std::min(entries.size(), start + chunk_size);
    for (std::size_t k = start; k < end; ++k) {
      c.entries.push_back({entries[k].user, entries[k].item, entries[k].value, EntryKind::fresh, 0.0});
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace hemf
