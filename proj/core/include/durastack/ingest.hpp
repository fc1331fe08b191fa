#pragma once

#include <array>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "durastack/schema.hpp"

namespace durastack {

inline constexpr std::array<std::string_view, 21> kCsvHeader = {
    "case_id", "site", "surgery_date", "emergency", "admission", "scheduled_duration_min",
    "general_anaesthesia", "pos_supine", "pos_prone", "pos_sitting", "pos_lithotomy",
    "pos_lateral", "pos_other", "sex", "age_years", "bmi", "allergy", "infection",
    "comorbidity", "asa", "actual_duration_min"};

/// Longest room occupancy accepted as a real elective case.
inline constexpr double kMaxPlausibleMinutes = 1440.0;

struct RowError {
  std::size_t line = 0;
  std::string case_id;
  std::vector<FieldError> errors;
};

struct ParsedCases {
  std::vector<CaseRecord> records;
  std::vector<RowError> errors;
};

/// Parses canonical case CSV. Bad rows are collected; a missing, duplicated
/// or unknown header column, or an empty file, throws DataError.
ParsedCases parse_csv(std::istream& in);

std::vector<std::string> to_csv_fields(const CaseRecord& record);
void write_csv(std::ostream& out, std::span<const CaseRecord> records);

struct ExclusionStage {
  std::string name;
  std::size_t remaining = 0;
  std::vector<std::string> excluded_ids;
};

struct ExclusionReport {
  std::vector<ExclusionStage> stages;

  nlohmann::json to_json() const;
  void write_csv(std::ostream& out) const;
};

struct CohortSelection {
  std::vector<CaseRecord> cohort;
  ExclusionReport report;
};

/// Applies, in order: emergency exclusion, weekend exclusion, ASA 5
/// exclusion (absent ASA retained), missing/implausible outcome exclusion.
CohortSelection select_cohort(std::vector<CaseRecord> records, bool keep_excluded_ids = true);

bool plausible_outcome(const std::optional<double>& minutes);

enum class Split { development, test };

struct DescriptiveCell {
  std::string text;
  std::optional<double> percent;
  std::optional<std::size_t> count;
  std::optional<std::array<double, 3>> quartiles;  // median, Q1, Q3
};

struct DescriptiveRow {
  std::string variable;
  std::string level;
  std::vector<DescriptiveCell> cells;
};

/// Baseline characteristics: n (%) among non-missing for categorical
/// variables, median (Q1, Q3) for continuous ones, "Missing %" rows.
struct DescriptiveTable {
  std::vector<std::string> columns;
  std::vector<std::size_t> column_n;
  std::vector<DescriptiveRow> rows;

  const DescriptiveRow* find(std::string_view variable, std::string_view level = {}) const;
  void write_csv(std::ostream& out) const;
  nlohmann::json to_json() const;
};

DescriptiveTable describe_cohort(std::span<const CaseRecord> cohort,
                                 const std::map<std::string, Split>& split_labels);

}  // namespace durastack
