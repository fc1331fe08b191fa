#include "durastack/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "durastack/csv.hpp"
#include "durastack/detail/files.hpp"
#include "durastack/errors.hpp"
#include "durastack/random.hpp"

namespace durastack {

namespace {

constexpr double kZ975 = 1.959963984540054;

std::span<const double> as_span(const Eigen::VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

void check_pair(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) {
    throw DataError(fmt::format("length mismatch: {} observed vs {} predicted", y.size(), yhat.size()));
  }
  if (y.empty()) throw DataError("metrics need at least one observation");
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(yhat[i])) {
      throw NumericError(fmt::format("non-finite value at row {}", i));
    }
  }
}

MetricEstimate normal_interval(double value, double variance, EstimateMethod method) {
  const double se = std::sqrt(std::max(variance, 0.0));
  return {value, value - kZ975 * se, value + kZ975 * se, method, variance};
}

}  // namespace

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw DataError(fmt::format("quantile probability {} outside [0,1]", p));
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

ErrorMetrics error_metrics(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  double sq = 0.0;
  double abs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - yhat[i];
    sq += r * r;
    abs += std::fabs(r);
  }
  const auto n = static_cast<double>(y.size());
  return {std::sqrt(sq / n), abs / n};
}

std::string_view to_string(EstimateMethod method) {
  switch (method) {
    case EstimateMethod::analytic: return "analytic";
    case EstimateMethod::bootstrap: return "bootstrap";
    case EstimateMethod::rubin: return "rubin";
    case EstimateMethod::random_effects: return "random_effects";
  }
  return "?";
}

Calibration calibration(std::span<const double> y, std::span<const double> yhat) {
  check_pair(y, yhat);
  const std::size_t n = y.size();
  if (n < 3) throw DataError("calibration needs at least 3 observations");
  const double nd = static_cast<double>(n);
  const double xbar = std::accumulate(yhat.begin(), yhat.end(), 0.0) / nd;
  const double ybar = std::accumulate(y.begin(), y.end(), 0.0) / nd;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = yhat[i] - xbar;
    const double dy = y[i] - ybar;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) {
    throw NumericError("calibration slope undefined: predictions have zero variance");
  }
  const double slope = sxy / sxx;
  const double intercept = ybar - slope * xbar;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - intercept - slope * yhat[i];
    rss += r * r;
  }
  const double sigma2 = rss / (nd - 2.0);
  Calibration c;
  c.n = n;
  c.slope = normal_interval(slope, sigma2 / sxx, EstimateMethod::analytic);
  c.intercept = normal_interval(intercept, sigma2 * (1.0 / nd + xbar * xbar / sxx), EstimateMethod::analytic);
  c.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return c;
}

double adjust_r2(double r2, std::size_t n, std::size_t predictors) {
  if (n <= predictors + 1) {
    throw DataError(fmt::format("adjusted R^2 needs n > p + 1 (n = {}, p = {})", n, predictors));
  }
  const double nd = static_cast<double>(n);
  const double pd = static_cast<double>(predictors);
  return 1.0 - (1.0 - r2) * (nd - 1.0) / (nd - pd - 1.0);
}

double adjusted_r2(std::span<const double> y, std::span<const double> yhat, std::size_t predictors) {
  if (y.size() <= predictors + 1) {
    throw DataError(fmt::format("adjusted R^2 needs n > p + 1 (n = {}, p = {})", y.size(), predictors));
  }
  return adjust_r2(calibration(y, yhat).r2, y.size(), predictors);
}

MetricEstimate rubin_pool(std::span<const double> estimates, std::span<const double> within_var) {
  if (estimates.empty() || estimates.size() != within_var.size()) {
    throw DataError("rubin_pool needs one within-imputation variance per estimate");
  }
  const double m = static_cast<double>(estimates.size());
  const double point = std::accumulate(estimates.begin(), estimates.end(), 0.0) / m;
  double between = 0.0;
  if (estimates.size() > 1) {
    for (double e : estimates) between += (e - point) * (e - point);
    between /= (m - 1.0);
  }
  for (double w : within_var) {
    if (w < 0.0) throw DataError("within-imputation variances must be non-negative");
  }
  const double within = std::accumulate(within_var.begin(), within_var.end(), 0.0) / m;
  const double total = between > 0.0 ? within + (1.0 + 1.0 / m) * between : within;
  return normal_interval(point, total, EstimateMethod::rubin);
}

RandomEffectsPool pool_clusters(std::span<const double> values, std::span<const double> variances) {
  if (values.size() < 2 || values.size() != variances.size()) {
    throw DataError("random-effects pooling needs at least two clusters with variances");
  }
  double sw = 0.0, swx = 0.0, sw2 = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(variances[i] > 0.0)) throw DataError("random-effects pooling needs positive variances");
    const double w = 1.0 / variances[i];
    sw += w;
    swx += w * values[i];
    sw2 += w * w;
  }
  const double fixed = swx / sw;
  double q = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    q += (values[i] - fixed) * (values[i] - fixed) / variances[i];
  }
  const double k = static_cast<double>(values.size());
  const double c = sw - sw2 / sw;
  const double tau2 = c > 0.0 ? std::max(0.0, (q - (k - 1.0)) / c) : 0.0;
  double rw = 0.0, rwx = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double w = 1.0 / (variances[i] + tau2);
    rw += w;
    rwx += w * values[i];
  }
  RandomEffectsPool out;
  out.estimate = normal_interval(rwx / rw, 1.0 / rw, EstimateMethod::random_effects);
  out.tau2 = tau2;
  out.q = q;
  return out;
}

namespace {

// Percentile of an already sorted sample (type 7).
double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapInterval summarize_replicates(std::vector<double> reps) {
  const double b = static_cast<double>(reps.size());
  const double mean = std::accumulate(reps.begin(), reps.end(), 0.0) / b;
  double ss = 0.0;
  for (double r : reps) ss += (r - mean) * (r - mean);
  std::sort(reps.begin(), reps.end());
  return {sorted_quantile(reps, 0.025), sorted_quantile(reps, 0.975), std::sqrt(ss / (b - 1.0))};
}

// RMSE and MAE replicates from one shared set of resamples.
std::pair<BootstrapInterval, BootstrapInterval> bootstrap_errors(std::span<const double> residuals,
                                                                 std::size_t B, std::uint64_t seed) {
  const std::size_t n = residuals.size();
  std::vector<double> rmse(B), mae(B);
  Rng rng(seed);
  for (std::size_t b = 0; b < B; ++b) {
    double sq = 0.0, ab = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = residuals[uniform_index(rng, n)];
      sq += r * r;
      ab += std::fabs(r);
    }
    rmse[b] = std::sqrt(sq / static_cast<double>(n));
    mae[b] = ab / static_cast<double>(n);
  }
  return {summarize_replicates(std::move(rmse)), summarize_replicates(std::move(mae))};
}

}  // namespace

BootstrapInterval bootstrap_ci(const IndexStatistic& statistic, std::size_t n, std::size_t B,
                               std::uint64_t seed) {
  if (B < 100) throw DataError(fmt::format("bootstrap needs B >= 100 (got {})", B));
  if (n == 0) throw DataError("bootstrap of an empty sample");
  Rng rng(seed);
  std::vector<std::size_t> idx(n);
  std::vector<double> reps(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (auto& i : idx) i = uniform_index(rng, n);
    reps[b] = statistic(idx);
  }
  return summarize_replicates(std::move(reps));
}

std::string_view to_string(ReportContext context) {
  return context == ReportContext::iecv ? "iecv" : "temporal_test";
}

namespace {

struct PerImputation {
  std::vector<double> rmse, rmse_var, mae, mae_var, icpt, icpt_var, slope, slope_var;
};

// Evaluates one group of rows across every imputation column.
PerImputation evaluate_rows(const Eigen::VectorXd& y, const Eigen::MatrixXd& yhat,
                            const std::vector<std::size_t>& rows, std::size_t B, std::uint64_t seed) {
  PerImputation out;
  std::vector<double> obs(rows.size()), pred(rows.size()), resid(rows.size());
  for (Eigen::Index j = 0; j < yhat.cols(); ++j) {
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(rows[i]);
      obs[i] = y(r);
      pred[i] = yhat(r, j);
      resid[i] = obs[i] - pred[i];
    }
    const auto err = error_metrics(obs, pred);
    const auto [brmse, bmae] = bootstrap_errors(resid, B, derive_seed(seed, "bootstrap", j));
    const auto cal = calibration(obs, pred);
    out.rmse.push_back(err.rmse);
    out.rmse_var.push_back(brmse.se * brmse.se);
    out.mae.push_back(err.mae);
    out.mae_var.push_back(bmae.se * bmae.se);
    out.icpt.push_back(cal.intercept.value);
    out.icpt_var.push_back(cal.intercept.variance);
    out.slope.push_back(cal.slope.value);
    out.slope_var.push_back(cal.slope.variance);
  }
  return out;
}

MetricEstimate pool_across_clusters(const std::vector<ClusterRow>& rows, MetricEstimate ClusterRow::*field) {
  if (rows.size() == 1) return rows.front().*field;
  std::vector<double> values, variances;
  for (const auto& r : rows) {
    values.push_back((r.*field).value);
    // A zero-width cluster interval would dominate the weights; floor it.
    variances.push_back(std::max((r.*field).variance, 1e-300));
  }
  return pool_clusters(values, variances).estimate;
}

void check_inputs(const Eigen::VectorXd& y, const Eigen::MatrixXd& yhat) {
  if (yhat.rows() != y.size() || yhat.cols() < 1) {
    throw DataError("predictions must have one row per observation and at least one imputation column");
  }
}

}  // namespace

MetricReport cluster_report(const Eigen::VectorXd& y, const Eigen::MatrixXd& yhat,
                            const std::vector<ClusterKey>& clusters, ReportContext context,
                            std::size_t bootstrap_b, std::uint64_t seed) {
  check_inputs(y, yhat);
  if (clusters.size() != static_cast<std::size_t>(y.size())) throw DataError("one cluster key per row required");
  if (bootstrap_b < 100) throw DataError(fmt::format("bootstrap needs B >= 100 (got {})", bootstrap_b));
  std::vector<ClusterKey> keys = clusters;
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  if (keys.empty()) throw DataError("cluster report of an empty dataset");

  MetricReport report;
  report.context = context;
  for (const auto& key : keys) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
      if (clusters[i] == key) rows.push_back(i);
    }
    PerImputation per;
    try {
      per = evaluate_rows(y, yhat, rows, bootstrap_b, derive_seed(seed, key.hash()));
    } catch (const NumericError& e) {
      throw NumericError(fmt::format("cluster {}: {}", key.label(), e.what()));
    }
    ClusterRow row;
    row.cluster = key.label();
    row.n = rows.size();
    row.rmse = rubin_pool(per.rmse, per.rmse_var);
    row.mae = rubin_pool(per.mae, per.mae_var);
    row.cal_intercept = rubin_pool(per.icpt, per.icpt_var);
    row.cal_slope = rubin_pool(per.slope, per.slope_var);
    report.rows.push_back(std::move(row));
  }
  report.overall.cluster = "Overall";
  for (const auto& r : report.rows) report.overall.n += r.n;
  report.overall.rmse = pool_across_clusters(report.rows, &ClusterRow::rmse);
  report.overall.mae = pool_across_clusters(report.rows, &ClusterRow::mae);
  report.overall.cal_intercept = pool_across_clusters(report.rows, &ClusterRow::cal_intercept);
  report.overall.cal_slope = pool_across_clusters(report.rows, &ClusterRow::cal_slope);
  return report;
}

CohortSummary cohort_summary(const Eigen::VectorXd& y, const Eigen::MatrixXd& yhat,
                             std::size_t bootstrap_b, std::uint64_t seed) {
  check_inputs(y, yhat);
  std::vector<std::size_t> rows(static_cast<std::size_t>(y.size()));
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  const auto per = evaluate_rows(y, yhat, rows, bootstrap_b, derive_seed(seed, "cohort"));
  CohortSummary s;
  s.n = rows.size();
  s.rmse = rubin_pool(per.rmse, per.rmse_var);
  s.mae = rubin_pool(per.mae, per.mae_var);
  s.cal_intercept = rubin_pool(per.icpt, per.icpt_var);
  s.cal_slope = rubin_pool(per.slope, per.slope_var);
  for (Eigen::Index j = 0; j < yhat.cols(); ++j) {
    const Eigen::VectorXd col = yhat.col(j);
    s.adjusted_r2_per_imputation.push_back(adjusted_r2(as_span(y), as_span(col)));
  }
  s.adjusted_r2 = std::accumulate(s.adjusted_r2_per_imputation.begin(), s.adjusted_r2_per_imputation.end(), 0.0) /
                  static_cast<double>(s.adjusted_r2_per_imputation.size());
  return s;
}

// ---------------------------------------------------------------------------
// Serialization and plot data

namespace {

nlohmann::json estimate_json(const MetricEstimate& e) {
  return {{"value", e.value},
          {"ci_low", e.has_interval() ? nlohmann::json(e.ci_low) : nlohmann::json(nullptr)},
          {"ci_high", e.has_interval() ? nlohmann::json(e.ci_high) : nlohmann::json(nullptr)},
          {"method", to_string(e.method)},
          {"variance", e.variance == e.variance ? nlohmann::json(e.variance) : nlohmann::json(nullptr)}};
}

EstimateMethod method_from(std::string_view s) {
  for (auto m : {EstimateMethod::analytic, EstimateMethod::bootstrap, EstimateMethod::rubin,
                 EstimateMethod::random_effects}) {
    if (to_string(m) == s) return m;
  }
  throw DataError(fmt::format("unknown estimate method '{}'", s));
}

MetricEstimate estimate_from(const nlohmann::json& j) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  auto num = [&](const char* key) { return j.at(key).is_null() ? nan : j.at(key).get<double>(); };
  return {j.at("value").get<double>(), num("ci_low"), num("ci_high"),
          method_from(j.at("method").get<std::string>()), num("variance")};
}

nlohmann::json row_json(const ClusterRow& r) {
  return {{"cluster", r.cluster},
          {"n", r.n},
          {"rmse", estimate_json(r.rmse)},
          {"mae", estimate_json(r.mae)},
          {"cal_intercept", estimate_json(r.cal_intercept)},
          {"cal_slope", estimate_json(r.cal_slope)}};
}

ClusterRow row_from(const nlohmann::json& j) {
  return {j.at("cluster").get<std::string>(), j.at("n").get<std::size_t>(),
          estimate_from(j.at("rmse")), estimate_from(j.at("mae")),
          estimate_from(j.at("cal_intercept")), estimate_from(j.at("cal_slope"))};
}

std::string num(double v) { return v == v ? fmt::format("{:.6f}", v) : std::string(); }

void write_row(std::ostream& out, const ClusterRow& r) {
  out << csv::escape(r.cluster) << ',' << r.n;
  for (const auto* e : {&r.rmse, &r.mae, &r.cal_intercept, &r.cal_slope}) {
    out << ',' << num(e->value) << ',' << num(e->ci_low) << ',' << num(e->ci_high);
  }
  out << '\n';
}

}  // namespace

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["context"] = to_string(context);
  auto& arr = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back(row_json(r));
  j["overall"] = row_json(overall);
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    const auto ctx = j.at("context").get<std::string>();
    if (ctx == "iecv") {
      r.context = ReportContext::iecv;
    } else if (ctx == "temporal_test") {
      r.context = ReportContext::temporal_test;
    } else {
      throw DataError(fmt::format("unknown report context '{}'", ctx));
    }
    for (const auto& row : j.at("rows")) r.rows.push_back(row_from(row));
    r.overall = row_from(j.at("overall"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed metric report: {}", e.what()));
  }
}

void MetricReport::write_csv(std::ostream& out) const {
  out << kReportCsvHeader << '\n';
  for (const auto& r : rows) write_row(out, r);
  write_row(out, overall);
}

nlohmann::json CohortSummary::to_json() const {
  return {{"n", n},
          {"rmse", estimate_json(rmse)},
          {"mae", estimate_json(mae)},
          {"cal_intercept", estimate_json(cal_intercept)},
          {"cal_slope", estimate_json(cal_slope)},
          {"adjusted_r2", adjusted_r2},
          {"adjusted_r2_per_imputation", adjusted_r2_per_imputation}};
}

std::vector<CalibrationBin> calibration_bins(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat,
                                             std::size_t bins) {
  const auto n = static_cast<std::size_t>(y.size());
  if (yhat.size() != y.size()) throw DataError("calibration bins need aligned vectors");
  if (bins == 0 || n < bins) {
    throw DataError(fmt::format("{} equal-frequency bins need at least {} rows (got {})", bins, bins, n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return yhat(static_cast<Eigen::Index>(a)) < yhat(static_cast<Eigen::Index>(b));
  });
  std::vector<CalibrationBin> out;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t lo = b * n / bins;
    const std::size_t hi = (b + 1) * n / bins;
    CalibrationBin bin{b + 1, hi - lo, 0.0, 0.0};
    for (std::size_t k = lo; k < hi; ++k) {
      bin.mean_predicted += yhat(static_cast<Eigen::Index>(order[k]));
      bin.mean_observed += y(static_cast<Eigen::Index>(order[k]));
    }
    bin.mean_predicted /= static_cast<double>(bin.n);
    bin.mean_observed /= static_cast<double>(bin.n);
    out.push_back(bin);
  }
  return out;
}

PlotData make_plot_data(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat, std::uint64_t seed) {
  PlotData plots;
  plots.deciles = calibration_bins(y, yhat, 10);
  const auto n = static_cast<std::size_t>(y.size());
  std::vector<std::size_t> keep(n);
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (n > kScatterCap) {
    Rng rng(seed);
    std::shuffle(keep.begin(), keep.end(), rng);
    keep.resize(kScatterCap);
    std::sort(keep.begin(), keep.end());
  }
  for (auto i : keep) {
    plots.scatter.emplace_back(yhat(static_cast<Eigen::Index>(i)), y(static_cast<Eigen::Index>(i)));
  }
  return plots;
}

std::vector<std::filesystem::path> emit_report(const MetricReport& report, const PlotData* plots,
                                               const std::filesystem::path& dir,
                                               std::string_view stem) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create report directory {}: {}", dir.string(), ec.message()));
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::string& name, const std::string& content) {
    auto path = dir / name;
    detail::write_file_atomic(path, content);
    written.push_back(path);
  };

  std::ostringstream csv;
  report.write_csv(csv);
  put(fmt::format("{}.csv", stem), csv.str());
  put(fmt::format("{}.json", stem), report.to_json().dump(2) + "\n");

  if (plots) {
    std::ostringstream fig3;
    fig3 << "cluster,rmse,rmse_lo,rmse_hi\n";
    auto fig3_row = [&](const ClusterRow& r) {
      fig3 << csv::escape(r.cluster) << ',' << num(r.rmse.value) << ',' << num(r.rmse.ci_low) << ','
           << num(r.rmse.ci_high) << '\n';
    };
    for (const auto& r : report.rows) fig3_row(r);
    fig3_row(report.overall);
    put(fmt::format("{}_fig3.csv", stem), fig3.str());

    std::ostringstream dec;
    dec << "decile,n,mean_predicted,mean_observed\n";
    for (const auto& b : plots->deciles) {
      dec << b.bin << ',' << b.n << ',' << num(b.mean_predicted) << ',' << num(b.mean_observed) << '\n';
    }
    put(fmt::format("{}_fig4_deciles.csv", stem), dec.str());

    std::ostringstream sc;
    sc << "predicted,observed\n";
    for (const auto& [p, o] : plots->scatter) sc << num(p) << ',' << num(o) << '\n';
    put(fmt::format("{}_fig4_scatter.csv", stem), sc.str());
  }
  return written;
}

}  // namespace durastack
