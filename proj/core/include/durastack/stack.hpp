#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "durastack/learners.hpp"
#include "durastack/mice.hpp"
#include "durastack/schema.hpp"

namespace durastack {

inline constexpr std::uint32_t kArtifactVersion = 1;
inline constexpr std::string_view kArtifactMagic{"DSMODEL\0", 8};

struct StackWeights {
  std::array<double, 4> w{0.25, 0.25, 0.25, 0.25};
};

/// Tolerance for the simplex invariants.
inline constexpr double kSimplexTolerance = 1e-12;

/// Convex least squares over the probability simplex by exact enumeration of
/// the 15 supports. Ties go to the maximum-entropy minimizer.
StackWeights fit_stack_weights(const Eigen::MatrixXd& oof, const Eigen::VectorXd& y);

/// Throws NumericError unless w >= 0 and sum(w) = 1 within kSimplexTolerance.
void check_weights(const StackWeights& weights);

double stacked(const StackWeights& weights, const std::array<double, 4>& predictions);
Eigen::VectorXd stacked(const StackWeights& weights, const Eigen::MatrixXd& predictions);

struct Pipeline {
  ImputationModelSet imputer;
  std::array<FittedLearner, 4> learners;
  StackWeights weights;
};

struct Provenance {
  std::uint64_t seed = 0;
  std::size_t m = 0;
  std::size_t iterations = 0;
  std::string created;        // ISO-8601 UTC
  std::string tool_version;
  nlohmann::json grids;
  nlohmann::json training;    // cohort and cluster summary
  std::uint64_t tune_digest = 0;
};

struct LockedModel {
  std::uint32_t format_version = kArtifactVersion;
  EncodingMeta meta;
  std::vector<Pipeline> pipelines;
  Provenance provenance;
};

struct LockInput {
  const EncodedDataset& development;
  const std::vector<StreamResult>& imputations;
  const std::vector<std::array<LearnerSpec, 4>>& specs;
  const std::vector<StackWeights>& weights;
  std::uint64_t seed = 0;
};

/// Refits the four learners on each imputation's completed development data.
LockedModel lock(const LockInput& input, Provenance provenance);

std::uint64_t lock_seed(std::uint64_t seed, std::size_t imputation, LearnerKind kind);

struct LockedPrediction {
  std::vector<double> log_pred_per_pipeline;
  double log_pred_mean = 0.0;
  double predicted_minutes = 0.0;
  double pipeline_spread = 0.0;
  std::vector<std::string> imputed_fields;
};

struct RecordOutcome {
  std::optional<LockedPrediction> prediction;
  std::string error;
};

/// Serve/batch path: companion-model imputation, each pipeline's stack, mean
/// of the log predictions. Per-record failures do not stop the batch.
std::vector<RecordOutcome> predict_locked(const LockedModel& model, const std::vector<PredictorInput>& records,
                                          std::uint64_t seed);
LockedPrediction predict_one(const LockedModel& model, const PredictorInput& record, std::uint64_t seed);

/// Validation path: n x m stacked log predictions, one column per pipeline,
/// imputing each pipeline's copy of the data with its own models.
Eigen::MatrixXd predict_pipelines(const LockedModel& model, const EncodedDataset& data, bool use_outcome,
                                  std::uint64_t seed);

std::string serialize(const LockedModel& model);
LockedModel deserialize(std::string_view bytes);
void save(const LockedModel& model, std::ostream& out);
LockedModel load(std::istream& in);
void save_file(const LockedModel& model, const std::filesystem::path& path);
LockedModel load_file(const std::filesystem::path& path);

/// Binary forms used for bitwise comparisons.
std::string serialize(const ImputationModelSet& models);
std::string serialize(const FittedLearner& learner);

/// The manifest section of an artifact, parsed.
nlohmann::json read_manifest(std::string_view bytes);

/// Hex FNV-1a digest of a byte string.
std::string digest_hex(std::string_view bytes);

}  // namespace durastack
