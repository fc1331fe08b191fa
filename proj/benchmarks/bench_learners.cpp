#include <benchmark/benchmark.h>

#include "durastack/learners.hpp"
#include "durastack/random.hpp"
#include "durastack/synthdata.hpp"

using namespace durastack;

namespace {

struct Design {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  EncodingMeta meta;
};

// Complete encoded cohort of roughly n rows.
const Design& design(std::size_t n) {
  static std::map<std::size_t, Design> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto c = GeneratorConfig::defaults(n / 5, 1);
  c.rate_emergency = c.rate_weekend = c.rate_asa5 = c.rate_missing_outcome = c.rate_implausible_outcome = 0.0;
  auto records = generate(c).records;
  std::erase_if(records, [&](const CaseRecord& r) { return r.surgery_date.year == c.test_year; });
  auto data = encode(records);
  return cache.emplace(n, Design{std::move(data.X), std::move(data.y), std::move(data.meta)}).first->second;
}

void BM_ElasticNet(benchmark::State& state) {
  const auto& d = design(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_elastic_net(d.X, d.y, 0.01, 0.5));
  state.SetItemsProcessed(state.iterations() * d.X.rows());
}
BENCHMARK(BM_ElasticNet)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_Gam(benchmark::State& state) {
  const auto& d = design(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_gam({d.X, d.y, d.meta}, 1.0, 10));
  state.SetItemsProcessed(state.iterations() * d.X.rows());
}
BENCHMARK(BM_Gam)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_RandomForest(benchmark::State& state) {
  const auto& d = design(static_cast<std::size_t>(state.range(0)));
  const auto mtry = static_cast<std::size_t>(d.X.cols()) / 3;
  for (auto _ : state) benchmark::DoNotOptimize(fit_random_forest(d.X, d.y, 100, mtry, 5, 1));
  state.SetItemsProcessed(state.iterations() * d.X.rows());
}
BENCHMARK(BM_RandomForest)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

void BM_Gbt(benchmark::State& state) {
  const auto& d = design(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(fit_gbt(d.X, d.y, 200, 3, 0.05, 0.8, 1));
  state.SetItemsProcessed(state.iterations() * d.X.rows());
}
BENCHMARK(BM_Gbt)->Arg(2000)->Arg(20000)->Unit(benchmark::kMillisecond);

}  // namespace
