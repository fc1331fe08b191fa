#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "durastack/config.hpp"
#include "durastack/schema.hpp"

namespace durastack {

enum class MissingMechanism { mcar, mar_site };

std::string_view to_string(MissingMechanism m);

/// One masking rule. A rule naming several fields masks them jointly per
/// record (a block group).
struct MissingnessRule {
  std::vector<std::string> fields;
  MissingMechanism mechanism = MissingMechanism::mcar;
  double rate = 0.0;
  std::map<std::string, double> site_factor;  // MAR(site) only; absent sites use 1

  double rate_for(const std::string& site) const;
};

/// Fields a rule may name.
const std::vector<std::string>& maskable_fields();

/// "S1-2021" style key used for shifts and config.
std::string cell_key(const ClusterKey& cluster);

struct CellSpec {
  ClusterKey cluster;
  std::size_t n = 0;
};

struct GeneratorConfig {
  std::vector<CellSpec> cells;
  int test_year = 2024;

  double p_admission = 0.503;
  double p_general_anaesthesia = 0.962;
  std::array<double, kPositionCount> p_position{0.755, 0.046, 0.010, 0.131, 0.110, 0.009};
  double p_male = 0.507;
  double p_allergy = 0.219;
  double p_infection = 0.065;
  double p_comorbidity = 0.202;
  std::array<double, 4> p_asa{0.175, 0.490, 0.319, 0.016};
  /// (probability, age) knots of the age quantile function.
  std::vector<std::pair<double, double>> age_quantiles{{0.0, 18.0}, {0.25, 52.0}, {0.5, 69.0}, {0.75, 78.0}, {1.0, 95.0}};
  std::array<double, 3> bmi_quartiles{18.83, 21.95, 24.75};
  std::array<double, 3> scheduled_quartiles{75.0, 150.0, 300.0};

  double rate_emergency = 0.0963;
  double rate_weekend = 0.02;
  double rate_asa5 = 0.005;
  double rate_missing_outcome = 0.01;
  double rate_implausible_outcome = 0.002;

  double intercept = 2.7;
  std::map<std::string, double> beta;           // by encoded feature name
  std::map<std::string, double> cluster_shift;  // by cell_key
  double residual_sd = 0.5;

  std::vector<MissingnessRule> missingness;
  std::uint64_t seed = 20240101;

  /// Two sites, S1 2021-2024 and S2 2022-2024, with the given cell sizes.
  static GeneratorConfig defaults(std::size_t n_development_cell = 4000, std::size_t n_test_cell = 3000);
  /// Overrides defaults from key=value text; unknown keys are rejected.
  static GeneratorConfig from(const KeyValues& kv);

  /// Throws UsageError on any violated invariant.
  void validate() const;
  nlohmann::json to_json() const;
  EncodingMeta encoding() const;
};

std::vector<MissingnessRule> default_missingness();
std::map<std::string, double> default_beta();

struct TruthRecord {
  std::string case_id;
  double linear_predictor = 0.0;  // intercept + x'beta + shift
  double log_duration = 0.0;
};

struct GroundTruth {
  double intercept = 0.0;
  std::map<std::string, double> beta;
  std::map<std::string, double> cluster_shift;
  double residual_sd = 0.0;
  std::vector<TruthRecord> records;

  nlohmann::json to_json() const;
};

struct GeneratedCohort {
  std::vector<CaseRecord> records;  // complete, before masking
  GroundTruth truth;
};

/// Deterministic given config.seed; cells are generated in parallel with
/// per-cell derived seeds.
GeneratedCohort generate(const GeneratorConfig& config);

struct MaskedCell {
  std::string case_id;
  std::string column;  // CSV column name
  std::string value;   // CSV text before masking
};

struct MaskResult {
  std::vector<CaseRecord> records;
  std::vector<MaskedCell> masked;

  void write_sidecar(std::ostream& out) const;
};

/// Applies the rules in order; each rule draws once per record. Unknown or
/// unmaskable field names throw UsageError.
MaskResult mask(const std::vector<CaseRecord>& cohort, const std::vector<MissingnessRule>& rules, std::uint64_t seed);

/// Restores masked cells from a sidecar.
std::vector<CaseRecord> unmask(const std::vector<CaseRecord>& masked, const std::vector<MaskedCell>& cells);

std::vector<MaskedCell> read_mask_sidecar(std::istream& in);

}  // namespace durastack
