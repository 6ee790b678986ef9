#include "hemf/ratings.hpp"

#include <string>

#include "hemf/errors.hpp"

namespace hemf {

SparseRatings::SparseRatings(std::size_t n_users, std::size_t n_items)
    : by_user_(n_users), by_item_(n_items) {}

SparseRatings SparseRatings::from_entries(std::size_t n_users, std::size_t n_items,
                                          std::span<const Rating> entries) {
  SparseRatings r(n_users, n_items);
  r.entries_.reserve(entries.size());
  r.index_.reserve(entries.size());
  for (const auto& e : entries) r.add(e.user, e.item, e.value);
  return r;
}

void SparseRatings::add(std::uint32_t user, std::uint32_t item, double value) {
  const auto [it, inserted] = index_.try_emplace(key(user, item), entries_.size());
  if (!inserted) {
    throw DataError("duplicate rating for (user " + std::to_string(user) + ", item " +
                    std::to_string(item) + ")");
  }
  if (user >= by_user_.size()) by_user_.resize(std::size_t{user} + 1);
  if (item >= by_item_.size()) by_item_.resize(std::size_t{item} + 1);
  entries_.push_back({user, item, value});
  by_user_[user].push_back({item, value});
  by_item_[item].push_back({user, value});
}

double SparseRatings::revise(std::uint32_t user, std::uint32_t item, double value) {
  const auto it = index_.find(key(user, item));
  if (it == index_.end()) {
    throw DataError("revision of unobserved rating (user " + std::to_string(user) + ", item " +
                    std::to_string(item) + ")");
  }
  Rating& e = entries_[it->second];
  const double old = e.value;
  e.value = value;
  for (auto& n : by_user_[user]) {
    if (n.index == item) n.value = value;
  }
  for (auto& n : by_item_[item]) {
    if (n.index == user) n.value = value;
  }
  return old;
}

std::optional<double> SparseRatings::find(std::uint32_t user, std::uint32_t item) const {
  const auto it = index_.find(key(user, item));
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].value;
}

void SparseRatings::resize(std::size_t n_users, std::size_t n_items) {
  if (n_users < by_user_.size() || n_items < by_item_.size()) {
    throw DimensionMismatch("SparseRatings::resize cannot shrink index spaces");
  }
  by_user_.resize(n_users);
  by_item_.resize(n_items);
}

SparseRatings SparseRatings::transposed() const {
  SparseRatings t(n_items(), n_users());
  for (const auto& e : entries_) t.add(e.item, e.user, e.value);
  return t;
}

}  // namespace hemf
