#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "durastack/config.hpp"
#include "durastack/errors.hpp"
#include "durastack/iecv.hpp"
#include "durastack/ingest.hpp"
#include "durastack/metrics.hpp"
#include "durastack/stack.hpp"

namespace durastack {

inline constexpr std::string_view kToolVersion = "1.0.0";

/// Runs fn and prefixes any durastack error with "<stage>: ", keeping its type.
template <typename Fn>
decltype(auto) run_stage(std::string_view stage, Fn&& fn);

/// ISO-8601 UTC time from SOURCE_DATE_EPOCH, or the Unix epoch when unset.
std::string build_timestamp();

struct DevelopResult {
  LockedModel model;
  ExclusionReport exclusions;
  std::vector<ImputationTuning> tuning;
  std::vector<StackWeights> weights;
  /// Stacked out-of-fold log predictions, one column per imputation.
  Eigen::MatrixXd oof_stacked;
  Eigen::VectorXd y;
  std::vector<ClusterKey> clusters;
  MetricReport iecv_report;
  nlohmann::json tune_audit;
};

DevelopResult develop(std::vector<CaseRecord> records, const RunConfig& config);

/// Writes model.dsm, iecv_report.{csv,json} with figure data, tune_audit.json
/// and exclusions.csv. Returns the paths written.
std::vector<std::filesystem::path> write_develop_outputs(const DevelopResult& result,
                                                         const std::filesystem::path& dir);

struct ValidateResult {
  ExclusionReport exclusions;
  Eigen::VectorXd y;
  Eigen::MatrixXd log_pred;  // n x m, one column per pipeline
  std::vector<ClusterKey> clusters;
  MetricReport report;
  CohortSummary summary;
  PlotData plots;
};

ValidateResult validate(const LockedModel& model, std::vector<CaseRecord> records, const RunConfig& config);

/// Writes temporal_report.{csv,json} with figure data and temporal_summary.json.
std::vector<std::filesystem::path> write_validate_outputs(const ValidateResult& result,
                                                          const std::filesystem::path& dir);

struct PredictionRow {
  std::string case_id;
  RecordOutcome outcome;
};

/// Reads a prediction CSV: any subset of the predictor columns plus optional
/// case_id and site. Rows that fail validation carry their field errors.
std::vector<PredictionRow> predict_csv(const LockedModel& model, std::istream& in, std::uint64_t seed);

inline constexpr std::string_view kPredictionCsvHeader =
    "case_id,predicted_minutes,log_prediction_mean,pipeline_spread,imputed_fields,error";

void write_predictions(std::ostream& out, const std::vector<PredictionRow>& rows);

/// Parses a case CSV file, failing with DataError if any row is invalid.
std::vector<CaseRecord> read_cases(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

template <typename Fn>
decltype(auto) run_stage(std::string_view stage, Fn&& fn) {
  try {
    return fn();
  } catch (const ArtifactError& e) {
    throw ArtifactError(std::string(stage) + ": " + e.what());
  } catch (const DataError& e) {
    throw DataError(std::string(stage) + ": " + e.what());
  } catch (const NumericError& e) {
    throw NumericError(std::string(stage) + ": " + e.what());
  } catch (const UsageError& e) {
    throw UsageError(std::string(stage) + ": " + e.what());
  }
}

}  // namespace durastack
