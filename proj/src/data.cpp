#include "hemf/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "hemf/rng.hpp"

namespace hemf {

std::uint32_t IdMap::intern(const std::string& id) {
  const auto it = index_.find(id);
  if (it != index_.end()) return it->second;
  const auto k = static_cast<std::uint32_t>(names_.size());
  names_.push_back(id);
  index_.emplace(id, k);
  return k;
}

std::optional<std::uint32_t> IdMap::find(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

RatingFormat parse_format(const std::string& name) {
  if (name == "csv") return RatingFormat::csv;
  if (name == "double_colon") return RatingFormat::double_colon;
  if (name == "per_item_files") return RatingFormat::per_item_files;
  throw DataError("unknown rating format '" + name + "'");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_on(std::string_view line, std::string_view sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = line.find(sep, pos);
    if (next == std::string_view::npos) {
      out.push_back(trim(line.substr(pos)));
      return out;
    }
    out.push_back(trim(line.substr(pos, next - pos)));
    pos = next + sep.size();
  }
}

double parse_number(const std::string& field, const std::string& where, const char* what) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, v);
  if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw DataError(where + ": invalid " + what + " '" + field + "'");
  }
  return v;
}

// YYYY-MM-DD -> YYYYMMDD as a sortable number
double parse_date(const std::string& field, const std::string& where) {
  if (field.size() != 10 || field[4] != '-' || field[7] != '-') {
    throw DataError(where + ": invalid date '" + field + "'");
  }
  const std::string digits = field.substr(0, 4) + field.substr(5, 2) + field.substr(8, 2);
  return parse_number(digits, where, "date");
}

struct Collector {
  IdMap users, items;
  std::vector<Rating> order;  // first-appearance order of pairs
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<double> stamps;

  void add(const std::string& u, const std::string& i, double value, double stamp) {
    const auto ui = users.intern(u);
    const auto ii = items.intern(i);
    const auto key = (static_cast<std::uint64_t>(ui) << 32) | ii;
    const auto it = index.find(key);
    if (it == index.end()) {
      index.emplace(key, order.size());
      order.push_back({ui, ii, value});
      stamps.push_back(stamp);
      return;
    }
    if (stamp >= stamps[it->second]) {
      order[it->second].value = value;
      stamps[it->second] = stamp;
    }
  }

  Dataset finish(const std::string& source) {
    if (order.empty()) throw DataError(source + ": no ratings");
    Dataset d;
    d.ratings = SparseRatings::from_entries(users.size(), items.size(), order);
    d.users = std::move(users);
    d.items = std::move(items);
    return d;
  }
};

bool skippable(const std::string& line) { return line.empty() || line[0] == '#'; }

void parse_lines(std::istream& in, RatingFormat format, const std::string& source, Collector& c,
                 double& line_counter) {
  std::string raw;
  std::size_t line_no = 0;
  std::optional<std::string> current_item;
  while (std::getline(in, raw)) {
    ++line_no;
    line_counter += 1.0;
    const std::string line = trim(raw);
    if (skippable(line)) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    // Without timestamps the running line count orders duplicates.
    const double order_stamp = -1e18 + line_counter;
    switch (format) {
      case RatingFormat::csv: {
        const auto f = split_on(line, ",");
        if (f.size() != 3 && f.size() != 4) throw DataError(where + ": expected 3 or 4 fields");
        if (f[0].empty() || f[1].empty()) throw DataError(where + ": empty id");
        const double r = parse_number(f[2], where, "rating");
        const double ts = f.size() == 4 ? parse_number(f[3], where, "timestamp") : order_stamp;
        c.add(f[0], f[1], r, ts);
        break;
      }
      case RatingFormat::double_colon: {
        const auto f = split_on(line, "::");
        if (f.size() != 4) throw DataError(where + ": expected user::item::rating::timestamp");
        if (f[0].empty() || f[1].empty()) throw DataError(where + ": empty id");
        c.add(f[0], f[1], parse_number(f[2], where, "rating"),
              parse_number(f[3], where, "timestamp"));
        break;
      }
      case RatingFormat::per_item_files: {
        if (line.back() == ':') {
          const auto id = trim(line.substr(0, line.size() - 1));
          if (id.empty() || id.find(',') != std::string::npos) {
            throw DataError(where + ": invalid item header");
          }
          current_item = id;
          break;
        }
        if (!current_item) throw DataError(where + ": rating line before any 'item_id:' header");
        const auto f = split_on(line, ",");
        if (f.size() != 3) throw DataError(where + ": expected user,rating,date");
        if (f[0].empty()) throw DataError(where + ": empty id");
        c.add(f[0], *current_item, parse_number(f[1], where, "rating"), parse_date(f[2], where));
        break;
      }
    }
  }
}

}  // namespace

Dataset parse_ratings(std::istream& in, RatingFormat format, const std::string& source) {
  Collector c;
  double counter = 0.0;
  parse_lines(in, format, source, c, counter);
  return c.finish(source);
}

Dataset parse_ratings(const std::filesystem::path& path, RatingFormat format) {
  return parse_ratings(path, format, IdMap{}, IdMap{});
}

Dataset parse_ratings(const std::filesystem::path& path, RatingFormat format, IdMap users,
                      IdMap items) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (format == RatingFormat::per_item_files && fs::is_directory(path)) {
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(path);
  }
  Collector c;
  c.users = std::move(users);
  c.items = std::move(items);
  double counter = 0.0;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw DataError("cannot open " + f.string());
    parse_lines(in, format, f.string(), c, counter);
  }
  return c.finish(path.string());
}

void write_ratings_csv(std::ostream& out, const SparseRatings& ratings, const IdMap* users,
                       const IdMap* items) {
  out.precision(17);
  for (const auto& e : ratings.entries()) {
    if (users) {
      out << users->name(e.user);
    } else {
      out << e.user;
    }
    out << ',';
    if (items) {
      out << items->name(e.item);
    } else {
      out << e.item;
    }
    out << ',' << e.value << '\n';
  }
}

void SplitSpec::validate() const {
  if (mode == Mode::holdout && !(fraction > 0.0 && fraction < 1.0)) {
    throw DomainError("holdout fraction must lie in (0, 1)");
  }
  if (mode == Mode::kfold && (folds < 2 || fold >= folds)) {
    throw DomainError("kfold needs at least 2 folds and fold < folds");
  }
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t k = 0; k < n; ++k) p[k] = k;
  CounterRng rng(seed);
  for (std::size_t k = n; k > 1; --k) {
    const auto j = static_cast<std::size_t>(rng.below(k));
    std::swap(p[k - 1], p[j]);
  }
  return p;
}

Split split_dataset(const SparseRatings& ratings, const SplitSpec& spec) {
  spec.validate();
  const auto entries = ratings.entries();
  const std::size_t n = entries.size();
  std::vector<std::uint8_t> in_test(n, 0);
  Split out;

  switch (spec.mode) {
    case SplitSpec::Mode::holdout: {
      const auto perm = seeded_permutation(n, spec.seed);
      const auto n_train = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(n)));
      for (std::size_t k = n_train; k < n; ++k) in_test[perm[k]] = 1;
      break;
    }
    case SplitSpec::Mode::kfold: {
      const auto perm = seeded_permutation(n, spec.seed);
      for (std::size_t k = 0; k < n; ++k) {
        if (k % spec.folds == spec.fold) in_test[perm[k]] = 1;
      }
      break;
    }
    case SplitSpec::Mode::weak_generalization: {
      std::vector<std::vector<std::size_t>> by_user(ratings.n_users());
      for (std::size_t k = 0; k < n; ++k) by_user[entries[k].user].push_back(k);
      CounterRng rng(spec.seed);
      for (const auto& list : by_user) {
        if (list.empty()) continue;
        if (list.size() < 2) {
          ++out.ineligible_users;
          continue;
        }
        in_test[list[static_cast<std::size_t>(rng.below(list.size()))]] = 1;
      }
      break;
    }
  }

  out.train = SparseRatings(ratings.n_users(), ratings.n_items());
  out.test = SparseRatings(ratings.n_users(), ratings.n_items());
  for (std::size_t k = 0; k < n; ++k) {
    auto& dst = in_test[k] ? out.test : out.train;
    dst.add(entries[k].user, entries[k].item, entries[k].value);
  }
  if (out.test.empty()) throw DataError("split produced an empty test set");
  return out;
}

std::vector<RatingChunk> chunk_stream(const SparseRatings& train, std::size_t chunk_size,
                                      std::uint64_t seed) {
  if (chunk_size == 0) throw DomainError("chunk size must be at least 1");
  const auto entries = train.entries();
  const auto perm = seeded_permutation(entries.size(), seed);
  std::vector<Rating> permuted;
  permuted.reserve(entries.size());
  for (const auto k : perm) permuted.push_back(entries[k]);
  return make_chunks(permuted, chunk_size);
}

std::vector<RatingChunk> parse_chunk_stream(std::istream& in, IdMap& users, IdMap& items) {
  std::vector<RatingChunk> out;
  RatingChunk current;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty()) {
      if (!current.empty()) out.push_back(std::move(current));
      current = {};
      continue;
    }
    if (line[0] == '#') continue;
    const std::string where = "chunk stream:" + std::to_string(line_no);
    const auto f = split_on(line, ",");
    if (f.size() != 3 && f.size() != 4) throw DataError(where + ": expected user,item,rating[,prev_rating]");
    if (f[0].empty() || f[1].empty()) throw DataError(where + ": empty id");
    ChunkEntry e{users.intern(f[0]), items.intern(f[1]), parse_number(f[2], where, "rating"),
                 EntryKind::fresh, 0.0};
    if (f.size() == 4) {
      e.kind = EntryKind::revision;
      e.previous = parse_number(f[3], where, "previous rating");
    }
    current.entries.push_back(e);
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

double rmse(std::span<const double> predictions, const SparseRatings& test) {
  if (test.empty()) throw DataError("rmse: empty test set");
  if (predictions.size() != test.size()) throw DataError("rmse: prediction count differs from test size");
  double s = 0.0;
  const auto entries = test.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const double e = predictions[k] - entries[k].value;
    s += e * e;
  }
  return std::sqrt(s / static_cast<double>(entries.size()));
}

std::vector<double> predict_all(const ModelState& state, const SparseRatings& test, double offset,
                                std::optional<RatingRange> clamp) {
  std::vector<double> out;
  out.reserve(test.size());
  for (const auto& e : test.entries()) {
    double p = offset;
    if (e.user < state.users.size() && e.item < state.items.size()) {
      p += predict_entry(state, e.user, e.item);
    }
    if (clamp) p = std::clamp(p, clamp->lo, clamp->hi);
    out.push_back(p);
  }
  return out;
}

SparseRatings shifted(const SparseRatings& ratings, double delta) {
  SparseRatings out(ratings.n_users(), ratings.n_items());
  for (const auto& e : ratings.entries()) out.add(e.user, e.item, e.value + delta);
  return out;
}

double mean_rating(const SparseRatings& ratings) {
  if (ratings.empty()) throw DataError("mean_rating: no ratings");
  double s = 0.0;
  for (const auto& e : ratings.entries()) s += e.value;
  return s / static_cast<double>(ratings.size());
}

}  // namespace hemf
