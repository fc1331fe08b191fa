#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "durastack/schema.hpp"

namespace durastack {

inline constexpr std::size_t kPmmDonors = 5;
inline constexpr double kImputationRidge = 1e-4;

/// Conditional model for one field. Predictors are an intercept, every other
/// standardized design column, one indicator per training cluster and, for
/// primary models, the standardized log outcome.
struct FieldModel {
  std::size_t field = 0;
  bool with_outcome = false;
  /// q x 1 for continuous and binary fields, q x classes for categorical ones.
  Eigen::MatrixXd coef;
  /// Continuous fields: observed values and their fitted means, sorted by mean.
  std::vector<double> donor_means;
  std::vector<double> donor_values;
};

/// Observed training values of a field, used to start every chain.
struct Marginal {
  std::vector<double> values;
  std::vector<std::uint64_t> counts;
};

struct ImputationModelSet {
  std::size_t stream = 0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::uint64_t fingerprint = 0;
  std::vector<ClusterKey> clusters;
  Eigen::VectorXd column_mean;
  Eigen::VectorXd column_sd;
  double outcome_mean = 0.0;
  double outcome_sd = 1.0;
  /// Field indices in visiting order; fields never missing in training last.
  std::vector<std::size_t> visit_order;
  std::vector<Marginal> marginals;      // by field index
  std::vector<FieldModel> primary;      // by field index
  std::vector<FieldModel> companion;    // by field index, outcome-free
};

struct StreamResult {
  ImputationModelSet models;
  EncodedDataset completed;
};

/// One chained-equation stream on training data only.
StreamResult fit_imputer_stream(const EncodedDataset& train, std::size_t stream, std::size_t iterations,
                                std::uint64_t seed);

/// m independent streams with derived seeds, run in parallel.
std::vector<StreamResult> fit_imputer(const EncodedDataset& train, std::size_t m, std::size_t iterations,
                                      std::uint64_t seed);

/// Seed of stream j under a base seed.
std::uint64_t stream_seed(std::uint64_t seed, std::size_t stream);

/// Fills the holdout's missing cells with frozen models; never refits.
EncodedDataset apply_imputer(const ImputationModelSet& models, const EncodedDataset& holdout, bool use_outcome,
                             std::uint64_t seed);

struct SingleImputation {
  Eigen::RowVectorXd row;
  std::vector<std::string> imputed_fields;  // canonical predictor names
};

/// Serve-time completion of one predictor record with the companion models.
SingleImputation impute_single(const ImputationModelSet& models, const EncodingMeta& meta,
                               const PredictorInput& input, std::uint64_t seed);

/// Class probabilities of a softmax row; exposed for property tests.
Eigen::RowVectorXd softmax(const Eigen::RowVectorXd& eta);

}  // namespace durastack
