#include <vector>

#include <benchmark/benchmark.h>

#include "splinemix/bspline.hpp"
#include "splinemix/criteria.hpp"
#include "splinemix/estimation.hpp"
#include "splinemix/simulation.hpp"

namespace {

using namespace splinemix;

GeneratedDataset reference_data(int n) {
  auto d = SimulationDesign::reference(n);
  d.noise_reading = NoiseReading::sd;
  return generate_dataset(d, 0);
}

void BM_EvalBasisRecursion(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const auto basis = make_knots(0.0, 1.0, m);
  double t = 0.0;
  for (auto _ : state) {
    double sum = 0.0;
    for (int j = 0; j < m; ++j) sum += eval_basis(basis, j, 3, t);
    benchmark::DoNotOptimize(sum);
    t += 0.001;
    if (t > 1.0) t = 0.0;
  }
}
BENCHMARK(BM_EvalBasisRecursion)->Arg(5)->Arg(10)->Arg(30);

void BM_DesignMatrix(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  const auto basis = make_knots(0.01, 1.0, m);
  const auto times = observation_grid(0.01, 1.0, 50);
  for (auto _ : state) benchmark::DoNotOptimize(design_matrix(basis, times).values.data());
}
BENCHMARK(BM_DesignMatrix)->Arg(5)->Arg(10)->Arg(30);

void BM_LogLikelihood(benchmark::State& state) {
  const auto g = reference_data(static_cast<int>(state.range(0)));
  const ModelSpec spec{5, 8, 0.01, 1.0};
  const ModelDesign design(spec, g.data);
  const auto params = default_init(spec, g.data);
  for (auto _ : state) benchmark::DoNotOptimize(log_likelihood(design, params));
}
BENCHMARK(BM_LogLikelihood)->Arg(30)->Arg(100);

void BM_EmFit(benchmark::State& state) {
  const auto g = reference_data(static_cast<int>(state.range(0)));
  const ModelSpec spec{5, 8, 0.01, 1.0};
  const auto init = default_init(spec, g.data);
  for (auto _ : state) benchmark::DoNotOptimize(em_fit(spec, g.data, init).loglik);
}
BENCHMARK(BM_EmFit)->Arg(30)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_InformationMatrix(benchmark::State& state) {
  const auto g = reference_data(30);
  const int m = static_cast<int>(state.range(0));
  const ModelSpec spec{5, m, 0.01, 1.0};
  const auto fit = em_fit(spec, g.data, default_init(spec, g.data));
  for (auto _ : state) benchmark::DoNotOptimize(information_matrix(fit, g.data).data());
}
BENCHMARK(BM_InformationMatrix)->Arg(4)->Arg(8)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
