#include <cmath>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "durastack/errors.hpp"
#include "durastack/metrics.hpp"
#include "durastack/random.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace durastack;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed, double shift = 0.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = shift + standard_normal(rng);
  return v;
}

std::vector<std::string> lines_of(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// Five clusters with differing fit; two imputation columns.
struct ReportInput {
  Eigen::VectorXd y;
  Eigen::MatrixXd yhat;
  std::vector<ClusterKey> clusters;
};

ReportInput report_input() {
  const std::vector<ClusterKey> keys{{"S1", 2021}, {"S1", 2022}, {"S1", 2023}, {"S2", 2022}, {"S2", 2023}};
  ReportInput in;
  const Eigen::Index n = 500;
  in.y.resize(n);
  in.yhat.resize(n, 2);
  Rng rng(71);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(i % 5);
    in.clusters.push_back(keys[c]);
    const double truth = 4.5 + 0.6 * standard_normal(rng);
    in.y(i) = truth + 0.4 * standard_normal(rng);
    for (Eigen::Index j = 0; j < 2; ++j) in.yhat(i, j) = 0.1 * static_cast<double>(c) - 0.2 + truth + 0.05 * standard_normal(rng);
  }
  return in;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("error metrics: exact small cases") {
  std::vector<double> y{0.0, 2.0}, zero{0.0, 0.0};
  auto e = error_metrics(y, zero);
  CHECK(e.rmse == std::sqrt(2.0));
  CHECK(e.mae == 1.0);
  auto same = error_metrics(y, y);
  CHECK(same.rmse == 0.0);
  CHECK(same.mae == 0.0);
  CHECK_THROWS_AS(error_metrics(y, std::vector<double>{1.0}), DataError);
}

TEST_CASE("error metrics: rmse >= mae >= 0") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto a = normals(30 + seed, seed);
    auto b = normals(30 + seed, seed + 100, 0.3);
    auto e = error_metrics(a, b);
    CHECK(e.mae >= 0.0);
    CHECK(e.rmse >= e.mae);
  }
}

TEST_CASE("calibration of perfect predictions is exactly (0, 1)") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto y = normals(257, seed, 4.7);
    auto c = calibration(y, y);
    CHECK(c.intercept.value == 0.0);
    CHECK(c.slope.value == 1.0);
    CHECK(adjusted_r2(y, y, 1) == 1.0);
  }
}

TEST_CASE("calibration inverts an affine map") {
  auto y = normals(100, 4, 4.0);
  std::vector<double> yhat;
  for (double v : y) yhat.push_back((v - 1.0) / 2.0);
  auto c = calibration(y, yhat);
  CHECK(c.slope.value == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(c.intercept.value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.slope.ci_low <= c.slope.value);
  CHECK(c.slope.ci_high >= c.slope.value);
}

TEST_CASE("calibration agrees with least squares by hand") {
  auto x = normals(80, 5, 4.0);
  auto y = normals(80, 6, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.8 * x[i] + 0.5;
  std::vector<std::vector<double>> rows;
  for (double v : x) rows.push_back({v});
  auto ols = oracle::ols(rows, y);
  auto c = calibration(y, x);
  CHECK(c.intercept.value == doctest::Approx(ols[0]).epsilon(1e-10));
  CHECK(c.slope.value == doctest::Approx(ols[1]).epsilon(1e-10));
}

TEST_CASE("adjusted r2: hand case and uncorrelated noise") {
  CHECK(adjust_r2(0.5, 5, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  auto y = normals(10000, 7);
  auto noise = normals(10000, 8);
  CHECK(std::abs(adjusted_r2(y, noise, 1)) < 0.02);
}

TEST_CASE("rubin's rules") {
  std::vector<double> est{1.0, 2.0, 3.0}, w{0.1, 0.1, 0.1};
  auto r = rubin_pool(est, w);
  CHECK(r.value == 2.0);
  CHECK(std::abs(r.variance - (0.1 + 4.0 / 3.0)) <= 1e-12);
  CHECK(std::abs(r.variance - 1.4333333333333333) <= 1e-12);
  auto one = rubin_pool(std::vector<double>{0.7}, std::vector<double>{0.02});
  CHECK(one.value == 0.7);
  CHECK(one.variance == 0.02);
  auto equal = rubin_pool(std::vector<double>{0.3, 0.3, 0.3}, std::vector<double>{0.01, 0.02, 0.03});
  CHECK(equal.variance == doctest::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("random-effects pooling: desk oracle") {
  using C = oracle::DerSimonianLairdCase;
  auto r = pool_clusters(C::values, C::variances);
  CHECK(std::abs(r.estimate.value - C::estimate) <= 1e-9);
  CHECK(std::abs(r.estimate.variance - C::variance) <= 1e-9);
  CHECK(std::abs(r.tau2 - C::tau2) <= 1e-9);
  CHECK(std::abs(r.q - C::q) <= 1e-9);
  auto moment = oracle::dersimonian_laird({C::values.begin(), C::values.end()}, {C::variances.begin(), C::variances.end()});
  CHECK(std::abs(moment[0] - C::estimate) <= 1e-12);
}

TEST_CASE("random-effects pooling: identical rows and heterogeneity") {
  auto same = pool_clusters(std::vector<double>{0.4, 0.4, 0.4}, std::vector<double>{0.01, 0.01, 0.01});
  CHECK(same.estimate.value == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(same.tau2 == 0.0);
  auto split = pool_clusters(std::vector<double>{-0.9, 1.0}, std::vector<double>{0.001, 0.001});
  CHECK(split.estimate.value == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(split.estimate.ci_low < -0.9);
  CHECK(split.estimate.ci_high > 1.0);
}

TEST_CASE("quantile follows type 7") {
  auto v = normals(37, 9);
  for (double p : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) CHECK(quantile(v, p) == oracle::quantile7(v, p));
  CHECK(quantile({50, 60, 70}, 0.25) == 55.0);
}

TEST_CASE("bootstrap: constant, deterministic, covering") {
  IndexStatistic constant = [](std::span<const std::size_t>) { return 3.0; };
  auto c = bootstrap_ci(constant, 50, 200, 1);
  CHECK(c.ci_low == 3.0);
  CHECK(c.ci_high == 3.0);

  auto data = normals(200, 10);
  IndexStatistic mean = [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) s += data[i];
    return s / static_cast<double>(idx.size());
  };
  auto a = bootstrap_ci(mean, 200, 300, 5);
  auto b = bootstrap_ci(mean, 200, 300, 5);
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);

  int covered = 0;
  const int reps = 500;
  for (int rep = 0; rep < reps; ++rep) {
    data = normals(200, 1000 + static_cast<std::uint64_t>(rep));
    auto ci = bootstrap_ci(mean, 200, 400, 2000 + static_cast<std::uint64_t>(rep));
    if (ci.ci_low <= 0.0 && 0.0 <= ci.ci_high) ++covered;
  }
  const double coverage = covered / static_cast<double>(reps);
  CHECK(std::abs(coverage - 0.95) <= 0.03);
}

TEST_CASE("cluster report: shape, counts and csv contract") {
  auto in = report_input();
  auto report = cluster_report(in.y, in.yhat, in.clusters, ReportContext::iecv, 200, 3);
  CHECK(report.rows.size() == 5);
  std::size_t total = 0;
  for (const auto& r : report.rows) {
    total += r.n;
    CHECK(r.rmse.value >= r.mae.value);
    CHECK(r.rmse.ci_low <= r.rmse.value);
    CHECK(r.rmse.ci_high >= r.rmse.value);
  }
  CHECK(total == report.overall.n);
  CHECK(report.overall.n == 500);
  CHECK(report.rows[0].cluster == "S1 at 2021");
  CHECK(report.overall.cal_intercept.method == EstimateMethod::random_effects);

  std::ostringstream csv;
  report.write_csv(csv);
  const auto text = csv.str();
  CHECK(text.substr(0, text.find('\n')) == kReportCsvHeader);
  CHECK(kReportCsvHeader == "cluster,n,rmse,rmse_lo,rmse_hi,mae,mae_lo,mae_hi,cal_intercept,ci_lo,ci_hi,cal_slope,ci_lo,ci_hi");
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);

  auto back = MetricReport::from_json(nlohmann::json::parse(report.to_json().dump()));
  std::ostringstream again;
  back.write_csv(again);
  CHECK(again.str() == text);
}

TEST_CASE("calibration bins and report files") {
  auto in = report_input();
  Eigen::VectorXd mean = in.yhat.rowwise().mean();
  auto bins = calibration_bins(in.y, mean);
  REQUIRE(bins.size() == 10);
  std::size_t n = 0;
  for (std::size_t b = 0; b < 10; ++b) {
    n += bins[b].n;
    if (b > 0) CHECK(bins[b].mean_predicted >= bins[b - 1].mean_predicted);
  }
  CHECK(n == 500);

  auto report = cluster_report(in.y, in.yhat, in.clusters, ReportContext::temporal_test, 100, 4);
  auto plots = make_plot_data(in.y, mean, 5);
  auto dir = fixtures::scratch("metrics-report");
  auto written = emit_report(report, &plots, dir, "temporal_report");
  CHECK(written.size() == 5);
  auto deciles = lines_of(dir / "temporal_report_fig4_deciles.csv");
  CHECK(deciles.size() == 11);
  CHECK(lines_of(dir / "temporal_report.csv").front() == kReportCsvHeader);
  CHECK(lines_of(dir / "temporal_report_fig4_scatter.csv").size() == 501);
}

TEST_CASE("cohort summary pools imputations") {
  auto in = report_input();
  auto s = cohort_summary(in.y, in.yhat, 100, 6);
  CHECK(s.n == 500);
  CHECK(s.adjusted_r2_per_imputation.size() == 2);
  CHECK(s.adjusted_r2 > 0.0);
  CHECK(s.cal_slope.method == EstimateMethod::rubin);
}

}
