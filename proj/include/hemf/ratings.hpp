#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace hemf {

enum class Side { user, item };

constexpr Side opposite(Side s) { return s == Side::user ? Side::item : Side::user; }
constexpr const char* side_name(Side s) { return s == Side::user ? "user" : "item"; }

struct Rating {
  std::uint32_t user;
  std::uint32_t item;
  double value;
};

struct Neighbor {
  std::uint32_t index;  // index on the opposite side
  double value;
};

/// Coordinate-list rating matrix over dense user/item index spaces with
/// per-user and per-item adjacency kept in insertion order.
class SparseRatings {
 public:
  SparseRatings() = default;
  SparseRatings(std::size_t n_users, std::size_t n_items);

  /// Throws DataError on duplicate (user, item) pairs.
  static SparseRatings from_entries(std::size_t n_users, std::size_t n_items,
                                    std::span<const Rating> entries);

  /// Appends an observation; grows the index spaces if needed.
  /// Throws DataError if the pair already exists.
  void add(std::uint32_t user, std::uint32_t item, double value);

  /// Replaces an existing rating and returns the previous value.
  /// Throws DataError if the pair is absent.
  double revise(std::uint32_t user, std::uint32_t item, double value);

  std::optional<double> find(std::uint32_t user, std::uint32_t item) const;

  void resize(std::size_t n_users, std::size_t n_items);

  std::size_t n_users() const { return by_user_.size(); }
  std::size_t n_items() const { return by_item_.size(); }
  std::size_t count(Side s) const { return s == Side::user ? n_users() : n_items(); }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::span<const Rating> entries() const { return entries_; }
  std::span<const Neighbor> neighbors(Side side, std::size_t index) const {
    return side == Side::user ? std::span<const Neighbor>(by_user_[index])
                              : std::span<const Neighbor>(by_item_[index]);
  }

  SparseRatings transposed() const;

 private:
  static std::uint64_t key(std::uint32_t u, std::uint32_t i) {
    return (static_cast<std::uint64_t>(u) << 32) | i;
  }

  std::vector<Rating> entries_;
  std::vector<std::vector<Neighbor>> by_user_;
  std::vector<std::vector<Neighbor>> by_item_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

}  // namespace hemf
