#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "durastack/schema.hpp"

namespace durastack {

/// Linear interpolation between order statistics (R type 7).
double quantile(std::vector<double> values, double p);

struct ErrorMetrics {
  double rmse = 0.0;
  double mae = 0.0;
};

ErrorMetrics error_metrics(std::span<const double> y, std::span<const double> yhat);

enum class EstimateMethod { analytic, bootstrap, rubin, random_effects };

std::string_view to_string(EstimateMethod method);

struct MetricEstimate {
  double value = 0.0;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  EstimateMethod method = EstimateMethod::analytic;
  /// Sampling variance behind the interval, when one exists.
  double variance = std::numeric_limits<double>::quiet_NaN();

  bool has_interval() const { return ci_low == ci_low && ci_high == ci_high; }
};

/// Observed-on-predicted OLS: calibration-in-the-large and slope with
/// classical standard errors and 95% normal intervals.
struct Calibration {
  MetricEstimate intercept;
  MetricEstimate slope;
  double r2 = 0.0;
  std::size_t n = 0;
};

Calibration calibration(std::span<const double> y, std::span<const double> yhat);

double adjust_r2(double r2, std::size_t n, std::size_t predictors);
/// Adjusted R^2 of the calibration regression (predictors = 1 there).
double adjusted_r2(std::span<const double> y, std::span<const double> yhat, std::size_t predictors = 1);

/// Rubin's rules with a normal-approximation 95% interval.
MetricEstimate rubin_pool(std::span<const double> estimates, std::span<const double> within_var);

struct RandomEffectsPool {
  MetricEstimate estimate;
  double tau2 = 0.0;
  double q = 0.0;
};

/// DerSimonian-Laird random-effects pooling of per-cluster estimates.
RandomEffectsPool pool_clusters(std::span<const double> values, std::span<const double> variances);

using IndexStatistic = std::function<double(std::span<const std::size_t>)>;

struct BootstrapInterval {
  double ci_low = 0.0;
  double ci_high = 0.0;
  double se = 0.0;
};

/// Percentile bootstrap over row indices; B >= 100.
BootstrapInterval bootstrap_ci(const IndexStatistic& statistic, std::size_t n, std::size_t B,
                               std::uint64_t seed);

enum class ReportContext { iecv, temporal_test };

std::string_view to_string(ReportContext context);

struct ClusterRow {
  std::string cluster;
  std::size_t n = 0;
  MetricEstimate rmse;
  MetricEstimate mae;
  MetricEstimate cal_intercept;
  MetricEstimate cal_slope;
};

struct MetricReport {
  ReportContext context = ReportContext::iecv;
  std::vector<ClusterRow> rows;
  ClusterRow overall;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  void write_csv(std::ostream& out) const;
};

inline constexpr std::string_view kReportCsvHeader =
    "cluster,n,rmse,rmse_lo,rmse_hi,mae,mae_lo,mae_hi,cal_intercept,ci_lo,ci_hi,cal_slope,ci_lo,ci_hi";

/// Per-cluster error and calibration, pooled across imputations by Rubin's
/// rules and across clusters by random effects. yhat holds one column per
/// imputation.
MetricReport cluster_report(const Eigen::VectorXd& y, const Eigen::MatrixXd& yhat,
                            const std::vector<ClusterKey>& clusters, ReportContext context,
                            std::size_t bootstrap_b, std::uint64_t seed);

/// Whole-cohort performance (no cluster split), pooled across imputations.
struct CohortSummary {
  std::size_t n = 0;
  MetricEstimate rmse;
  MetricEstimate mae;
  MetricEstimate cal_intercept;
  MetricEstimate cal_slope;
  double adjusted_r2 = 0.0;
  std::vector<double> adjusted_r2_per_imputation;

  nlohmann::json to_json() const;
};

CohortSummary cohort_summary(const Eigen::VectorXd& y, const Eigen::MatrixXd& yhat,
                             std::size_t bootstrap_b, std::uint64_t seed);

struct CalibrationBin {
  std::size_t bin = 0;
  std::size_t n = 0;
  double mean_predicted = 0.0;
  double mean_observed = 0.0;
};

std::vector<CalibrationBin> calibration_bins(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat,
                                             std::size_t bins = 10);

struct PlotData {
  std::vector<CalibrationBin> deciles;
  std::vector<std::pair<double, double>> scatter;  // (predicted, observed)
};

inline constexpr std::size_t kScatterCap = 5000;

PlotData make_plot_data(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat, std::uint64_t seed);

/// Writes <stem>.csv and <stem>.json; with plot data also <stem>_fig3.csv,
/// <stem>_fig4_deciles.csv and <stem>_fig4_scatter.csv.
std::vector<std::filesystem::path> emit_report(const MetricReport& report, const PlotData* plots,
                                               const std::filesystem::path& dir,
                                               std::string_view stem);

}  // namespace durastack
