#include <doctest.h>

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "hemf/checkpoint.hpp"
#include "hemf/experiment.hpp"
#include "hemf/sampler.hpp"
#include "support.hpp"

using namespace hemf;
namespace fs = std::filesystem;

namespace {

bool same_side(const SideState& a, const SideState& b) {
  if (a.size() != b.size() || a.n_components() != b.n_components()) return false;
  if (a.sticks.eta1 != b.sticks.eta1 || a.sticks.eta2 != b.sticks.eta2) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.factors[i].mean != b.factors[i].mean) return false;
    if (a.factors[i].second_moment != b.factors[i].second_moment) return false;
    if (a.memberships[i].weights != b.memberships[i].weights) return false;
  }
  for (std::size_t d = 0; d < a.n_components(); ++d) {
    const auto& x = a.communities[d];
    const auto& y = b.communities[d];
    if (x.mean != y.mean || x.mean_outer != y.mean_outer || x.W != y.W || x.iota != y.iota) return false;
    if (x.exp_prec != y.exp_prec || x.exp_logdet != y.exp_logdet) return false;
  }
  return true;
}

bool same_model(const ModelState& a, const ModelState& b) {
  const auto& h = a.hyper;
  const auto& g = b.hyper;
  const bool hyper = h.latent_dim == g.latent_dim && h.mu0 == g.mu0 && h.nu0 == g.nu0 &&
                     h.lambda0 == g.lambda0 && h.W0 == g.W0 && h.iota0 == g.iota0 &&
                     h.alpha == g.alpha && h.beta == g.beta && h.sigma2 == g.sigma2 &&
                     h.eps_spawn == g.eps_spawn && h.merge_tau == g.merge_tau &&
                     h.lr_alpha == g.lr_alpha && h.lr_iota == g.lr_iota;
  return hyper && a.elbo_trace == b.elbo_trace && same_side(a.users, b.users) &&
         same_side(a.items, b.items);
}

bool same_stats(const std::vector<SufficientStats>& a, const std::vector<SufficientStats>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (a[d].count != b[d].count || a[d].sum_mean != b[d].sum_mean || a[d].sum_second != b[d].sum_second)
      return false;
  }
  return true;
}

OnlineState streamed_state() {
  auto inst = hemf::testing::random_instance(4);
  auto s = resume_online(inst.state, inst.ratings, 77);
  RatingChunk chunk;
  chunk.entries.push_back({static_cast<std::uint32_t>(inst.ratings.n_users()), 0, 4.0, EntryKind::fresh, 0.0});
  chunk.entries.push_back({0, static_cast<std::uint32_t>(inst.ratings.n_items()), 2.0, EntryKind::fresh, 0.0});
  process_chunk(chunk, s, OnlineConfig{});
  return s;
}

std::string with_valid_crc(std::string bytes) {
  const auto n = bytes.size() - 4;
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n));
  const auto c = static_cast<std::uint32_t>(crc);
  std::memcpy(bytes.data() + n, &c, 4);
  return bytes;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto s = streamed_state();
  auto ckpt = checkpoint_of(s);
  ckpt.ids = Checkpoint::Ids{};
  ckpt.ids->users.intern("alice");
  ckpt.ids->items.intern("film");
  ckpt.model.elbo_trace = {-1.5, -1.25, std::nextafter(-1.0, 0.0)};

  const auto bytes = encode_checkpoint(ckpt);
  const auto back = decode_checkpoint(bytes);
  CHECK(same_model(back.model, ckpt.model));
  CHECK(back.cursor == ckpt.cursor);
  CHECK(back.rng.counter() == ckpt.rng.counter());
  CHECK(back.rng.seed() == ckpt.rng.seed());
  REQUIRE(back.online.has_value());
  CHECK(back.online->user_seen == ckpt.online->user_seen);
  CHECK(back.online->item_seen == ckpt.online->item_seen);
  CHECK(same_stats(back.online->user_stats, ckpt.online->user_stats));
  CHECK(same_stats(back.online->item_stats, ckpt.online->item_stats));
  CHECK(back.online->absorbed.size() == ckpt.online->absorbed.size());
  for (const auto& e : ckpt.online->absorbed.entries()) CHECK(*back.online->absorbed.find(e.user, e.item) == e.value);
  REQUIRE(back.ids.has_value());
  CHECK(back.ids->users.names() == std::vector<std::string>{"alice"});
  CHECK(encode_checkpoint(back) == bytes);

  const auto restored = online_state_of(back);
  CHECK(same_model(restored.model, ckpt.model));
  CHECK(restored.chunks == s.chunks);
}

TEST_CASE("checkpoint without a streaming section") {
  Checkpoint ckpt;
  ckpt.model = hemf::testing::random_instance(2).state;
  ckpt.cursor = 12;
  const auto back = decode_checkpoint(encode_checkpoint(ckpt));
  CHECK(same_model(back.model, ckpt.model));
  CHECK(back.cursor == 12);
  CHECK_FALSE(back.online.has_value());
  CHECK_FALSE(back.ids.has_value());
  CHECK_THROWS_AS(online_state_of(back), DataError);
}

TEST_CASE("checkpoint corruption is rejected") {
  const auto bytes = encode_checkpoint(checkpoint_of(streamed_state()));
  SUBCASE("truncation") {
    for (std::size_t keep : {std::size_t{0}, std::size_t{8}, std::size_t{15}, bytes.size() / 2, bytes.size() - 1}) {
      CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, keep)), DataError);
    }
  }
  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() / 3] ^= 0x10;
    CHECK_THROWS_AS(decode_checkpoint(bad), DataError);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(with_valid_crc(bad)), DataError);
  }
  SUBCASE("future schema version") {
    auto bad = bytes;
    const std::uint32_t version = kCheckpointSchema + 1;
    std::memcpy(bad.data() + 8, &version, 4);
    try {
      decode_checkpoint(with_valid_crc(bad));
      FAIL("expected a schema error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("schema version") != std::string::npos);
    }
  }
  SUBCASE("the oracle checksum reproduces the stored one") {
    CHECK(with_valid_crc(bytes) == bytes);
  }
}

TEST_CASE("checkpoint files") {
  const auto dir = fs::temp_directory_path() / "hemf_test_checkpoint";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto path = dir / "run.ckpt";
  const auto ckpt = checkpoint_of(streamed_state());
  save_checkpoint(path, ckpt);
  const auto back = load_checkpoint(path);
  CHECK(same_model(back.model, ckpt.model));

  std::ifstream in(path, std::ios::binary);
  std::string raw((std::istreambuf_iterator<char>(in)), {});
  CHECK(raw == encode_checkpoint(ckpt));
  std::ofstream(path, std::ios::binary | std::ios::trunc) << raw.substr(0, raw.size() - 10);
  CHECK_THROWS_AS(load_checkpoint(path), DataError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("a resumed stream follows the uninterrupted trajectory") {
  auto hyper = hemf::testing::small_hyper(3);
  const auto data = sample_from_model(hyper, 3, 2, 60, 40, 0.2, 5);
  const auto split = split_dataset(data.ratings, SplitSpec{.fraction = 0.9, .seed = 2});
  EvalContext ctx{&split.train, &split.test, 0.0, std::nullopt};

  for (const std::size_t evb_every : {std::size_t{0}, std::size_t{4}}) {
    StreamOptions opts;
    opts.chunk_size = 30;
    opts.d_init = 3;
    opts.k_init = 3;
    opts.epochs = 2;
    opts.evb_every = evb_every;
    opts.online.exec = Exec::serial;
    opts.online.propagation_sweeps = 1;

    const auto full = run_stream(hyper, opts, ctx, nullptr, std::nullopt, {});

    StreamHooks stop;
    stop.stop_after = 7;
    const auto head = run_stream(hyper, opts, ctx, nullptr, std::nullopt, stop);
    REQUIRE(head.ovb.has_value());
    CHECK(head.ovb->chunks == 7);
    const auto restored = online_state_of(decode_checkpoint(encode_checkpoint(checkpoint_of(*head.ovb))));
    const auto tail = run_stream(hyper, opts, ctx, nullptr, restored, {});

    CHECK(same_model(tail.ovb->model, full.ovb->model));
    CHECK(same_stats(tail.ovb->user_stats, full.ovb->user_stats));
    CHECK(tail.ovb->chunks == full.ovb->chunks);
    CHECK(tail.ovb->rng.counter() == full.ovb->rng.counter());
    REQUIRE(tail.test_rmse.size() + head.test_rmse.size() == full.test_rmse.size());
    for (std::size_t k = 0; k < tail.test_rmse.size(); ++k) {
      CHECK(tail.test_rmse[k] == full.test_rmse[head.test_rmse.size() + k]);
    }
  }
}
