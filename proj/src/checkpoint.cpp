#include "hemf/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace hemf {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes little-endian");

constexpr char kMagic[8] = {'H', 'E', 'M', 'F', 'C', 'K', 'P', 'T'};

constexpr std::uint32_t tag(const char (&s)[5]) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(s[0])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(s[3])) << 24;
}

constexpr std::uint32_t kHyper = tag("HYPR");
constexpr std::uint32_t kUsers = tag("USER");
constexpr std::uint32_t kItems = tag("ITEM");
constexpr std::uint32_t kElbo = tag("ELBO");
constexpr std::uint32_t kRng = tag("RNG_");
constexpr std::uint32_t kOnline = tag("ONLN");
constexpr std::uint32_t kIds = tag("IDMP");

class Writer {
 public:
  template <class T>
  void raw(const T& v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void u8(std::uint8_t v) { raw(v); }
  void u32(std::uint32_t v) { raw(v); }
  void u64(std::uint64_t v) { raw(v); }
  void f64(double v) { raw(v); }
  void size(std::size_t v) { u64(static_cast<std::uint64_t>(v)); }
  void vec(const Vec& v) {
    size(static_cast<std::size_t>(v.size()));
    for (Eigen::Index k = 0; k < v.size(); ++k) f64(v(k));
  }
  void mat(const Mat& m) {
    size(static_cast<std::size_t>(m.rows()));
    size(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) f64(m(r, c));
    }
  }
  void str(const std::string& s) {
    size(s.size());
    out_.append(s);
  }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t n) : p_(data), end_(data + n) {}

  template <class T>
  T raw() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return raw<std::uint8_t>(); }
  std::uint32_t u32() { return raw<std::uint32_t>(); }
  std::uint64_t u64() { return raw<std::uint64_t>(); }
  double f64() { return raw<double>(); }
  std::size_t size() {
    const auto v = u64();
    if (v > static_cast<std::uint64_t>(end_ - p_)) throw DataError("checkpoint: implausible length field");
    return static_cast<std::size_t>(v);
  }
  Vec vec() {
    const auto n = size();
    need(n * 8);
    Vec v(static_cast<Eigen::Index>(n));
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = f64();
    return v;
  }
  Mat mat() {
    const auto r = size();
    const auto c = size();
    need(r * c * 8);
    Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = f64();
    }
    return m;
  }
  std::string str() {
    const auto n = size();
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  const char* block(std::size_t n) {
    need(n);
    const char* start = p_;
    p_ += n;
    return start;
  }
  bool done() const { return p_ == end_; }
  void expect_done(const char* what) const {
    if (!done()) throw DataError(std::string("checkpoint: trailing bytes in section ") + what);
  }

 private:
  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end_ - p_) < n) throw DataError("checkpoint: truncated section");
  }
  const char* p_;
  const char* end_;
};

void put_hyper(Writer& w, const Hyperparameters& h) {
  w.size(h.latent_dim);
  w.vec(h.mu0);
  w.vec(h.nu0);
  w.f64(h.lambda0);
  w.mat(h.W0);
  for (double v : {h.iota0, h.alpha, h.beta, h.sigma2, h.eps_spawn, h.merge_tau, h.lr_alpha, h.lr_iota}) {
    w.f64(v);
  }
}

Hyperparameters get_hyper(Reader& r) {
  Hyperparameters h;
  h.latent_dim = r.size();
  h.mu0 = r.vec();
  h.nu0 = r.vec();
  h.lambda0 = r.f64();
  h.W0 = r.mat();
  h.iota0 = r.f64();
  h.alpha = r.f64();
  h.beta = r.f64();
  h.sigma2 = r.f64();
  h.eps_spawn = r.f64();
  h.merge_tau = r.f64();
  h.lr_alpha = r.f64();
  h.lr_iota = r.f64();
  return h;
}

void put_side(Writer& w, const SideState& s) {
  w.size(s.size());
  for (const auto& f : s.factors) {
    w.vec(f.mean);
    w.mat(f.second_moment);
  }
  for (const auto& m : s.memberships) w.vec(m.weights);
  w.vec(s.sticks.eta1);
  w.vec(s.sticks.eta2);
  w.size(s.communities.size());
  for (const auto& c : s.communities) {
    w.vec(c.mean);
    w.mat(c.mean_outer);
    w.mat(c.W);
    w.f64(c.iota);
    w.mat(c.exp_prec);
    w.f64(c.exp_logdet);
  }
}

SideState get_side(Reader& r) {
  SideState s;
  const auto n = r.size();
  s.factors.resize(n);
  for (auto& f : s.factors) {
    f.mean = r.vec();
    f.second_moment = r.mat();
  }
  s.memberships.resize(n);
  for (auto& m : s.memberships) m.weights = r.vec();
  s.sticks.eta1 = r.vec();
  s.sticks.eta2 = r.vec();
  s.communities.resize(r.size());
  for (auto& c : s.communities) {
    c.mean = r.vec();
    c.mean_outer = r.mat();
    c.W = r.mat();
    c.iota = r.f64();
    c.exp_prec = r.mat();
    c.exp_logdet = r.f64();
  }
  s.check_consistent();
  return s;
}

void put_stats(Writer& w, const std::vector<SufficientStats>& stats) {
  w.size(stats.size());
  for (const auto& s : stats) {
    w.f64(s.count);
    w.vec(s.sum_mean);
    w.mat(s.sum_second);
  }
}

std::vector<SufficientStats> get_stats(Reader& r) {
  std::vector<SufficientStats> out(r.size());
  for (auto& s : out) {
    s.count = r.f64();
    s.sum_mean = r.vec();
    s.sum_second = r.mat();
  }
  return out;
}

void put_flags(Writer& w, const std::vector<std::uint8_t>& flags) {
  w.size(flags.size());
  for (auto f : flags) w.u8(f);
}

std::vector<std::uint8_t> get_flags(Reader& r) {
  std::vector<std::uint8_t> out(r.size());
  for (auto& f : out) f = r.u8();
  return out;
}

void put_ids(Writer& w, const IdMap& ids) {
  w.size(ids.size());
  for (const auto& n : ids.names()) w.str(n);
}

IdMap get_ids(Reader& r) {
  IdMap ids;
  const auto n = r.size();
  for (std::size_t k = 0; k < n; ++k) {
    const auto name = r.str();
    if (ids.intern(name) != k) throw DataError("checkpoint: duplicate id in id map");
  }
  return ids;
}

void section(Writer& out, std::uint32_t t, Writer& payload) {
  out.u32(t);
  out.u64(payload.bytes().size());
  out.bytes().append(payload.bytes());
}

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  Writer out;
  out.bytes().append(kMagic, sizeof(kMagic));
  out.u32(kCheckpointSchema);
  {
    Writer p;
    put_hyper(p, ckpt.model.hyper);
    section(out, kHyper, p);
  }
  {
    Writer p;
    put_side(p, ckpt.model.users);
    section(out, kUsers, p);
  }
  {
    Writer p;
    put_side(p, ckpt.model.items);
    section(out, kItems, p);
  }
  {
    Writer p;
    p.size(ckpt.model.elbo_trace.size());
    for (double v : ckpt.model.elbo_trace) p.f64(v);
    section(out, kElbo, p);
  }
  {
    Writer p;
    p.u64(ckpt.rng.seed());
    p.u64(ckpt.rng.counter());
    p.u64(ckpt.cursor);
    section(out, kRng, p);
  }
  if (ckpt.online) {
    const auto& o = *ckpt.online;
    Writer p;
    p.size(o.absorbed.n_users());
    p.size(o.absorbed.n_items());
    p.size(o.absorbed.size());
    for (const auto& e : o.absorbed.entries()) {
      p.u32(e.user);
      p.u32(e.item);
      p.f64(e.value);
    }
    put_flags(p, o.user_seen);
    put_flags(p, o.item_seen);
    put_stats(p, o.user_stats);
    put_stats(p, o.item_stats);
    section(out, kOnline, p);
  }
  if (ckpt.ids) {
    Writer p;
    put_ids(p, ckpt.ids->users);
    put_ids(p, ckpt.ids->items);
    section(out, kIds, p);
  }
  const auto crc = crc_of(out.bytes().data(), out.bytes().size());
  out.u32(crc);
  return std::move(out.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t header = sizeof(kMagic) + 4;
  if (bytes.size() < header + 4) throw DataError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw DataError("checkpoint: bad magic");
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw DataError("checkpoint: checksum mismatch (truncated or corrupted)");
  }
  Reader top(bytes.data() + sizeof(kMagic), bytes.size() - sizeof(kMagic) - 4);
  const auto version = top.u32();
  if (version != kCheckpointSchema) {
    throw DataError("checkpoint: unsupported schema version " + std::to_string(version));
  }

  Checkpoint ckpt;
  bool have_hyper = false, have_users = false, have_items = false;
  while (!top.done()) {
    const auto t = top.u32();
    const auto n = top.size();
    Reader r(top.block(n), n);
    if (t == kHyper) {
      ckpt.model.hyper = get_hyper(r);
      have_hyper = true;
      r.expect_done("HYPR");
    } else if (t == kUsers) {
      ckpt.model.users = get_side(r);
      have_users = true;
      r.expect_done("USER");
    } else if (t == kItems) {
      ckpt.model.items = get_side(r);
      have_items = true;
      r.expect_done("ITEM");
    } else if (t == kElbo) {
      ckpt.model.elbo_trace.resize(r.size());
      for (auto& v : ckpt.model.elbo_trace) v = r.f64();
      r.expect_done("ELBO");
    } else if (t == kRng) {
      const auto seed = r.u64();
      const auto counter = r.u64();
      ckpt.rng = CounterRng(seed, counter);
      ckpt.cursor = r.u64();
      r.expect_done("RNG_");
    } else if (t == kOnline) {
      Checkpoint::Online o;
      const auto nu = r.size();
      const auto ni = r.size();
      const auto count = r.size();
      o.absorbed = SparseRatings(nu, ni);
      for (std::size_t k = 0; k < count; ++k) {
        const auto u = r.u32();
        const auto i = r.u32();
        o.absorbed.add(u, i, r.f64());
      }
      o.user_seen = get_flags(r);
      o.item_seen = get_flags(r);
      o.user_stats = get_stats(r);
      o.item_stats = get_stats(r);
      r.expect_done("ONLN");
      ckpt.online = std::move(o);
    } else if (t == kIds) {
      Checkpoint::Ids ids{get_ids(r), get_ids(r)};
      r.expect_done("IDMP");
      ckpt.ids = std::move(ids);
    }
    // unknown sections from newer writers of the same schema are skipped
  }
  if (!have_hyper || !have_users || !have_items) throw DataError("checkpoint: missing model section");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint checkpoint_of(const OnlineState& state) {
  Checkpoint c;
  c.model = state.model;
  c.rng = state.rng;
  c.cursor = state.chunks;
  c.online = Checkpoint::Online{state.absorbed, state.user_seen, state.item_seen, state.user_stats,
                                state.item_stats};
  return c;
}

OnlineState online_state_of(const Checkpoint& ckpt) {
  if (!ckpt.online) throw DataError("checkpoint holds no streaming state");
  OnlineState s;
  s.model = ckpt.model;
  s.absorbed = ckpt.online->absorbed;
  s.user_seen = ckpt.online->user_seen;
  s.item_seen = ckpt.online->item_seen;
  s.user_stats = ckpt.online->user_stats;
  s.item_stats = ckpt.online->item_stats;
  s.rng = ckpt.rng;
  s.chunks = ckpt.cursor;
  return s;
}

}  // namespace hemf
