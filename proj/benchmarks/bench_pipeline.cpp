#include <benchmark/benchmark.h>

#include "durastack/metrics.hpp"
#include "durastack/mice.hpp"
#include "durastack/random.hpp"
#include "durastack/stack.hpp"
#include "durastack/synthdata.hpp"

using namespace durastack;

namespace {

EncodedDataset masked_cohort(std::size_t cell) {
  auto c = GeneratorConfig::defaults(cell, 1);
  auto gen = generate(c);
  auto masked = mask(gen.records, c.missingness, 3);
  std::erase_if(masked.records, [&](const CaseRecord& r) { return r.surgery_date.year == c.test_year; });
  return encode(masked.records);
}

void BM_ImputerStream(benchmark::State& state) {
  const auto data = masked_cohort(static_cast<std::size_t>(state.range(0)) / 5);
  for (auto _ : state) benchmark::DoNotOptimize(fit_imputer_stream(data, 0, 5, 11));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_ImputerStream)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_StackWeights(benchmark::State& state) {
  const auto n = state.range(0);
  Rng rng(5);
  Eigen::VectorXd y(n);
  Eigen::MatrixXd oof(n, 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i) = standard_normal(rng);
    for (Eigen::Index k = 0; k < 4; ++k) oof(i, k) = y(i) + 0.3 * (k + 1) * standard_normal(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(fit_stack_weights(oof, y));
}
BENCHMARK(BM_StackWeights)->Arg(20000);

void BM_Calibration(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(6);
  std::vector<double> y(n), yhat(n);
  for (std::size_t i = 0; i < n; ++i) {
    yhat[i] = standard_normal(rng);
    y[i] = yhat[i] + 0.5 * standard_normal(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(calibration(y, yhat));
}
BENCHMARK(BM_Calibration)->Arg(6000);

}  // namespace

BENCHMARK_MAIN();
