#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace durastack {

struct Date {
  int year = 1970;
  int month = 1;
  int day = 1;

  /// Strict YYYY-MM-DD; returns nullopt for anything else or an invalid day.
  static std::optional<Date> parse(std::string_view text);
  std::string iso() const;
  /// ISO weekday: 1 = Monday ... 7 = Sunday.
  int weekday() const;
  bool valid() const;

  auto operator<=>(const Date&) const = default;
};

enum class Sex { female, male };

inline constexpr std::size_t kPositionCount = 6;
inline constexpr std::array<std::string_view, kPositionCount> kPositionFields = {
    "pos_supine", "pos_prone", "pos_sitting", "pos_lithotomy", "pos_lateral", "pos_other"};

using PositionFlags = std::array<bool, kPositionCount>;

struct CaseRecord {
  std::string case_id;
  std::string site_id;
  Date surgery_date;
  bool emergency = false;
  std::optional<bool> admission;
  std::optional<double> scheduled_duration_min;
  std::optional<bool> general_anaesthesia;
  std::optional<PositionFlags> positions;
  Sex sex = Sex::female;
  std::optional<double> age_years;
  std::optional<double> bmi;
  bool allergy = false;
  bool infection = false;
  bool comorbidity = false;
  std::optional<int> asa;
  std::optional<double> actual_duration_min;

  bool operator==(const CaseRecord&) const = default;
};

/// Centre-year unit used for folding and reporting.
struct ClusterKey {
  std::string site_id;
  int year = 0;

  std::string label() const;
  std::uint64_t hash() const;
  auto operator<=>(const ClusterKey&) const = default;
};

ClusterKey cluster_of(const CaseRecord& record);

struct FieldError {
  std::string field;
  std::string reason;

  bool operator==(const FieldError&) const = default;
};

/// A parsed row keyed by canonical column name; absent key or empty value
/// both mean "missing".
using RawRow = std::map<std::string, std::string, std::less<>>;

struct ValidatedRecord {
  std::optional<CaseRecord> record;
  std::vector<FieldError> errors;

  bool ok() const { return record.has_value(); }
};

ValidatedRecord validate_record(const RawRow& raw);

/// Predictor values for one case, every field optional. Serve-time requests and
/// batch prediction both go through this type.
struct PredictorInput {
  std::optional<std::string> site_id;
  std::optional<Date> surgery_date;
  std::optional<bool> admission;
  std::optional<double> scheduled_duration_min;
  std::optional<bool> general_anaesthesia;
  std::array<std::optional<bool>, kPositionCount> positions;
  std::optional<Sex> sex;
  std::optional<double> age_years;
  std::optional<double> bmi;
  std::optional<bool> allergy;
  std::optional<bool> infection;
  std::optional<bool> comorbidity;
  std::optional<int> asa;

  /// Canonical predictor names that carry no value, in canonical order.
  std::vector<std::string> absent_fields() const;
};

PredictorInput predictors_of(const CaseRecord& record);

/// Canonical predictor names accepted from users (no site, outcome or ids).
const std::vector<std::string>& predictor_field_names();

struct PredictorParse {
  PredictorInput input;
  std::vector<FieldError> errors;
};

/// Parses a name->text map of predictor values. Unknown names are errors;
/// ASA is restricted to the cohort domain 1..4.
PredictorParse parse_predictor_input(const RawRow& values);

// ---------------------------------------------------------------------------
// Encoding

/// Row views that also bind to rows of column-major matrices.
using RowRef = Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;
using ConstRowRef = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

enum class FieldKind { continuous, binary, categorical };

std::string_view to_string(FieldKind kind);

/// One column of the design matrix.
struct FeatureInfo {
  std::string name;       // e.g. "month_3", "bmi"
  std::string source;     // source field, e.g. "month"
  std::string level;      // indicator level; empty for pass-through columns
  std::string reference;  // dropped reference level; empty for pass-through

  bool operator==(const FeatureInfo&) const = default;
};

/// One imputation/encoding unit: a source field and the columns it owns.
struct FieldInfo {
  std::string name;
  FieldKind kind = FieldKind::continuous;
  std::vector<int> levels;            // categorical only; levels[0] is the reference
  std::vector<std::size_t> columns;   // categorical: one per non-reference level

  std::size_t class_count() const { return kind == FieldKind::categorical ? levels.size() : 2; }
  bool operator==(const FieldInfo&) const = default;
};

struct EncodingMeta {
  std::vector<int> year_levels;
  std::vector<FeatureInfo> features;
  std::vector<FieldInfo> fields;

  std::size_t width() const { return features.size(); }
  const FieldInfo& field(std::string_view name) const;
  std::optional<std::size_t> field_index(std::string_view name) const;
  std::optional<std::size_t> column(std::string_view feature_name) const;
  std::vector<std::string> column_names() const;
  /// Digest of the column layout; learners refuse data with another layout.
  std::uint64_t fingerprint() const;

  nlohmann::json to_json() const;
  static EncodingMeta from_json(const nlohmann::json& j);

  bool operator==(const EncodingMeta&) const = default;
};

/// Builds the canonical layout for the given (sorted, unique) year levels.
EncodingMeta make_encoding_meta(std::vector<int> year_levels);

/// Design matrix with NaN marking missing cells. missing_mask records which
/// cells were absent at the source and survives imputation.
struct EncodedDataset {
  std::vector<std::string> rows;
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::vector<ClusterKey> clusters;
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> missing_mask;
  EncodingMeta meta;

  std::size_t size() const { return rows.size(); }
  bool has_missing() const;
  EncodedDataset subset(std::span<const std::size_t> indices) const;
  std::vector<ClusterKey> distinct_clusters() const;
};

/// Encodes a cohort. Without meta the year levels come from the cohort; with
/// meta the layout is reused exactly and unseen years encode as the reference.
EncodedDataset encode(std::span<const CaseRecord> cohort, const EncodingMeta* meta = nullptr);

/// Encodes a single predictor row (NaN for absent fields).
Eigen::RowVectorXd encode_predictors(const PredictorInput& input, const EncodingMeta& meta);

/// Decodes the value a field takes in a (complete) encoded row: the raw value
/// for continuous/binary fields, the level for categorical fields.
double decode_field(const ConstRowRef& row, const FieldInfo& field);

/// Writes a field value (raw value or categorical level) into its columns.
void encode_field(RowRef row, const FieldInfo& field, double value);

}  // namespace durastack
