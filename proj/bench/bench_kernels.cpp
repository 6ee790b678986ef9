#include <benchmark/benchmark.h>

#include "hemf/kernels.hpp"
#include "hemf/sampler.hpp"

using namespace hemf;

namespace {

struct Fixture {
  SparseRatings ratings;
  ModelState state;
  std::vector<std::uint32_t> users;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    auto h = Hyperparameters::defaults(8);
    Fixture out;
    out.ratings = sample_from_model(h, 4, 4, 2000, 1000, 0.05, 11).ratings;
    out.state = init_state(out.ratings, h, 4, 4, 11);
    out.users = kernels::all_entities(out.ratings.n_users());
    return out;
  }();
  return f;
}

void BM_FactorSerial(benchmark::State& st) {
  const auto& f = fixture();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::factor_phase_serial(Side::user, f.state, f.ratings, f.users));
}

void BM_FactorParallel(benchmark::State& st) {
  const auto& f = fixture();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::factor_phase_parallel(Side::user, f.state, f.ratings, f.users));
}

void BM_MembershipSerial(benchmark::State& st) {
  const auto& f = fixture();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::membership_phase_serial(Side::user, f.state, f.users));
}

void BM_MembershipParallel(benchmark::State& st) {
  const auto& f = fixture();
  for (auto _ : st) benchmark::DoNotOptimize(kernels::membership_phase_parallel(Side::user, f.state, f.users));
}

}  // namespace

BENCHMARK(BM_FactorSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FactorParallel)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MembershipSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MembershipParallel)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
