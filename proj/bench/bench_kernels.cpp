// Serial reference vs OpenMP for the two parallel kernels.

#include "uwb/phy/cir.hpp"
#include "uwb/secrecy/secrecy.hpp"
#include "uwb/security/fingerprint.hpp"

#include <benchmark/benchmark.h>

using namespace uwb;

namespace {

secrecy::SecrecyScenario map_scenario(std::size_t trials) {
    secrecy::SecrecyScenario s;
    s.access_points = {{5.0, 5.0, 0.0}, {15.0, 15.0, 0.0}};
    s.eavesdroppers = {{18.0, 2.0, 0.0}};
    s.trials = trials;
    s.grid = {0.0, 0.0, 20.0, 20.0, 1.0, 0.0};
    return s;
}

std::vector<phy::Cir> captures(std::size_t n) {
    std::vector<phy::Cir> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(phy::synthesize_cir(2.0 + 0.1 * static_cast<double>(i % 200),
                                          phy::ImpairmentSignature::for_device(i % 10), 20.0, i));
    }
    return out;
}

void BM_SecrecyMapSerial(benchmark::State& state) {
    const auto s = map_scenario(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(secrecy::build_map_serial(s, {}, 7));
}

void BM_SecrecyMapParallel(benchmark::State& state) {
    const auto s = map_scenario(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(secrecy::build_map(s, {}, 7));
}

void BM_FingerprintSerial(benchmark::State& state) {
    const auto caps = captures(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(security::extract_embeddings_serial(caps));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_FingerprintParallel(benchmark::State& state) {
    const auto caps = captures(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(security::extract_embeddings(caps));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

} // namespace

BENCHMARK(BM_SecrecyMapSerial)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SecrecyMapParallel)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FingerprintSerial)->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FingerprintParallel)->Arg(1000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
