#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "durastack/schema.hpp"

namespace durastack {

enum class LearnerKind { elastic_net, gam, random_forest, gbt };

inline constexpr std::array<LearnerKind, 4> kLearnerKinds = {
    LearnerKind::elastic_net, LearnerKind::gam, LearnerKind::random_forest, LearnerKind::gbt};

std::string_view to_string(LearnerKind kind);
std::optional<LearnerKind> learner_kind_from(std::string_view name);
/// Hyperparameter names of a kind, in canonical grid order.
const std::vector<std::string>& learner_params(LearnerKind kind);

struct LearnerSpec {
  LearnerKind kind = LearnerKind::elastic_net;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  double at(std::string_view key) const;
  std::string label() const;
  nlohmann::json to_json() const;
  static LearnerSpec from_json(const nlohmann::json& j);
  bool operator==(const LearnerSpec&) const = default;
};

/// Throws UsageError unless keys match the kind's space and values are in range.
void check_spec(const LearnerSpec& spec);

/// Grid axis values are numbers, or for random_forest mtry the rules "p/3"
/// and "sqrt(p)", resolved against the design width.
struct GridAxis {
  std::string param;
  std::vector<std::string> values;
  bool operator==(const GridAxis&) const = default;
};

struct Grids {
  std::map<LearnerKind, std::vector<GridAxis>> axes;

  /// Cartesian product in canonical order (first axis varies slowest).
  std::vector<LearnerSpec> expand(LearnerKind kind, std::size_t width) const;
  nlohmann::json to_json() const;
};

Grids default_grids();

// ---------------------------------------------------------------------------
// Fitted parameters

struct ElasticNetModel {
  double intercept = 0.0;
  Eigen::VectorXd beta;  // original column scale
  std::size_t sweeps = 0;
};

/// Cubic B-spline smooth of one column with linear extension past the
/// boundary knots. Coefficients act on the constrained basis B * Z.
struct SplineTerm {
  std::size_t column = 0;
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> knots;  // full knot vector on [0, 1], boundary knots repeated
  Eigen::MatrixXd Z;          // sum-to-zero null space
  Eigen::VectorXd coef;

  std::size_t basis_size() const { return knots.size() - 4; }
  Eigen::VectorXd basis(double x) const;  // unconstrained basis at a raw x
  double eval(double x) const;
};

struct GamModel {
  double intercept = 0.0;
  std::vector<std::size_t> linear_columns;
  Eigen::VectorXd linear_coef;
  std::vector<SplineTerm> smooths;
};

/// Flat binary tree. Internal nodes send x[feature] <= value left and have
/// children left and left + 1; leaves carry their prediction in value.
struct Tree {
  static constexpr std::uint32_t kLeaf = 0xFFFFFFFFu;

  struct Node {
    std::uint32_t feature = kLeaf;
    std::uint32_t left = 0;
    double value = 0.0;
  };

  std::vector<Node> nodes;

  double predict(const ConstRowRef& x) const;
  std::size_t leaves() const;
};

struct TreeEnsemble {
  std::vector<Tree> trees;
  double base = 0.0;           // gbt base score
  double learning_rate = 1.0;  // gbt shrinkage
  bool average = false;        // forest: mean of trees; gbt: base + lr * sum

  double predict(const ConstRowRef& x) const;
};

struct FittedLearner {
  LearnerSpec spec;
  std::uint64_t fingerprint = 0;
  std::size_t width = 0;
  std::variant<ElasticNetModel, GamModel, TreeEnsemble> model;

  /// Rejects a layout fingerprint other than the training one.
  Eigen::VectorXd predict(const Eigen::MatrixXd& X, std::uint64_t fingerprint) const;
  Eigen::VectorXd predict(const EncodedDataset& data) const;
  double predict_row(const ConstRowRef& x) const;
};

/// Completed design plus outcome, as consumed by every learner.
struct TrainingView {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  const EncodingMeta& meta;
};

ElasticNetModel fit_elastic_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda,
                                double alpha);
GamModel fit_gam(const TrainingView& data, double lambda_s, std::size_t knots);
TreeEnsemble fit_random_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_trees,
                               std::size_t mtry, std::size_t min_node, std::uint64_t seed);
TreeEnsemble fit_gbt(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::size_t n_rounds,
                     std::size_t depth, double learning_rate, double subsample, std::uint64_t seed);

/// Dispatches on spec.kind. The data must have no missing cells.
FittedLearner fit_learner(const LearnerSpec& spec, const TrainingView& data);
FittedLearner fit_learner(const LearnerSpec& spec, const EncodedDataset& data);

/// Columns smoothed by the additive model.
inline constexpr std::array<std::string_view, 3> kSmoothFields = {"age_years", "bmi",
                                                                   "scheduled_duration_min"};

}  // namespace durastack
