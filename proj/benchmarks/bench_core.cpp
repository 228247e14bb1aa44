#include <benchmark/benchmark.h>

#include "qrelax/dynamics.hpp"
#include "qrelax/ensemble.hpp"
#include "qrelax/metrics.hpp"
#include "qrelax/wavefunction.hpp"

namespace {

qrelax::WaveFunction make_wf(int modes, double k) {
  return qrelax::WaveFunction({1.0, 1.0, k}, qrelax::sample_mode_set(modes, 6, 7));
}

void BM_Psi(benchmark::State& state) {
  const auto wf = make_wf(static_cast<int>(state.range(0)), 0.5);
  double x = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(wf.psi(x, -0.3, 1.0));
    x += 1e-9;
  }
}
BENCHMARK(BM_Psi)->Arg(4)->Arg(12)->Arg(24);

void BM_Velocity(benchmark::State& state) {
  const auto wf = make_wf(static_cast<int>(state.range(0)), 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(qrelax::velocity(wf, 0.4, -0.2, 0.7));
}
BENCHMARK(BM_Velocity)->Arg(4)->Arg(12)->Arg(24);

// One verified trajectory over [0, 2 pi] with eight records.
void BM_VerifiedTrajectory(benchmark::State& state) {
  const auto wf = make_wf(static_cast<int>(state.range(0)), 0.5);
  qrelax::IntegratorConfig cfg;
  for (int i = 0; i <= 8; ++i) cfg.record_times.push_back(i * 0.7853981633974483);
  for (auto _ : state) benchmark::DoNotOptimize(qrelax::integrate_verified(wf, {0.3, -0.8}, cfg));
}
BENCHMARK(BM_VerifiedTrajectory)->Arg(9)->Arg(24)->Unit(benchmark::kMillisecond);

void BM_CoarsePsi2(benchmark::State& state) {
  const auto wf = make_wf(24, 1.8);
  qrelax::CoarseGrid grid;
  // strong coupling leaks mass out of the box; this measures cost only
  for (auto _ : state) benchmark::DoNotOptimize(qrelax::coarse_psi2(wf, 1.0, grid, {0.0, 0.0}));
}
BENCHMARK(BM_CoarsePsi2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
