#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hemf/model.hpp"
#include "hemf/online.hpp"
#include "hemf/ratings.hpp"

namespace hemf {

/// External id <-> dense index, in order of first appearance.
class IdMap {
 public:
  std::uint32_t intern(const std::string& id);
  std::optional<std::uint32_t> find(const std::string& id) const;
  const std::string& name(std::uint32_t index) const { return names_.at(index); }
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

/// csv:            user,item,rating[,timestamp]
/// double_colon:   user::item::rating::timestamp
/// per_item_files: a file or a directory of files, each holding blocks that start
///                 with an `item_id:` line followed by `user,rating,date` lines
/// Blank lines and lines starting with '#' are skipped everywhere.
enum class RatingFormat { csv, double_colon, per_item_files };

RatingFormat parse_format(const std::string& name);

struct Dataset {
  SparseRatings ratings;
  IdMap users;
  IdMap items;
};

/// Duplicate pairs keep the occurrence with the latest timestamp (the later line on
/// ties or when timestamps are absent). Throws DataError with the line number on a
/// malformed line, and on input without any rating.
Dataset parse_ratings(const std::filesystem::path& path, RatingFormat format);
Dataset parse_ratings(std::istream& in, RatingFormat format, const std::string& source = "<stream>");
/// Same, extending existing id maps so indices agree with an earlier dataset.
Dataset parse_ratings(const std::filesystem::path& path, RatingFormat format, IdMap users,
                      IdMap items);

void write_ratings_csv(std::ostream& out, const SparseRatings& ratings, const IdMap* users = nullptr,
                       const IdMap* items = nullptr);

struct SplitSpec {
  enum class Mode { holdout, weak_generalization, kfold };
  Mode mode = Mode::holdout;
  double fraction = 0.9;  // holdout: train share, train = floor(fraction n)
  std::size_t folds = 5;
  std::size_t fold = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Split {
  SparseRatings train;
  SparseRatings test;
  std::size_t ineligible_users = 0;  // weak generalization: users left train-only
};

/// Both halves keep the input's index spaces. Throws DataError if the test side is empty.
Split split_dataset(const SparseRatings& ratings, const SplitSpec& spec);

/// Fisher-Yates permutation of 0..n-1 driven by the counter generator.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

/// Seeded permutation of the entries cut into consecutive chunks; all entries fresh.
std::vector<RatingChunk> chunk_stream(const SparseRatings& train, std::size_t chunk_size,
                                      std::uint64_t seed);

/// Newline-delimited `user,item,rating[,prev_rating]` records; a blank line ends a chunk.
/// A prev_rating marks a revision. Ids are interned into the given maps.
std::vector<RatingChunk> parse_chunk_stream(std::istream& in, IdMap& users, IdMap& items);

/// Throws DataError when empty or when the counts differ.
double rmse(std::span<const double> predictions, const SparseRatings& test);

/// <a>^T <b> + offset for every test entry, optionally clamped.
std::vector<double> predict_all(const ModelState& state, const SparseRatings& test,
                                double offset = 0.0, std::optional<RatingRange> clamp = std::nullopt);

/// Copy with every rating shifted by `delta`.
SparseRatings shifted(const SparseRatings& ratings, double delta);

double mean_rating(const SparseRatings& ratings);

}  // namespace hemf
