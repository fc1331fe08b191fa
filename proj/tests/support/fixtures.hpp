#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "durastack/ingest.hpp"
#include "durastack/schema.hpp"
#include "durastack/synthdata.hpp"

namespace fixtures {

/// A complete, valid elective weekday case.
inline durastack::CaseRecord make_case(std::string id, std::string site = "S1",
                                       durastack::Date date = {2021, 3, 4}, double minutes = 127.0) {
  durastack::CaseRecord r;
  r.case_id = std::move(id);
  r.site_id = std::move(site);
  r.surgery_date = date;
  r.admission = true;
  r.scheduled_duration_min = 120.0;
  r.general_anaesthesia = true;
  r.positions = durastack::PositionFlags{true, false, false, false, false, false};
  r.sex = durastack::Sex::male;
  r.age_years = 64.0;
  r.bmi = 23.5;
  r.asa = 2;
  r.actual_duration_min = minutes;
  return r;
}

inline durastack::RawRow raw_of(const durastack::CaseRecord& r) {
  durastack::RawRow raw;
  const auto fields = durastack::to_csv_fields(r);
  for (std::size_t k = 0; k < durastack::kCsvHeader.size(); ++k) raw.emplace(durastack::kCsvHeader[k], fields[k]);
  return raw;
}

/// Generator settings for desk-scale tests: the default layout with small
/// cells and no exclusion noise.
inline durastack::GeneratorConfig desk_config(std::size_t dev_cell, std::size_t test_cell, std::uint64_t seed) {
  auto c = durastack::GeneratorConfig::defaults(dev_cell, test_cell);
  c.seed = seed;
  c.rate_emergency = 0.0;
  c.rate_weekend = 0.0;
  c.rate_asa5 = 0.0;
  c.rate_missing_outcome = 0.0;
  c.rate_implausible_outcome = 0.0;
  return c;
}

inline std::vector<durastack::CaseRecord> development_only(const std::vector<durastack::CaseRecord>& records,
                                                           int test_year = 2024) {
  std::vector<durastack::CaseRecord> out;
  for (const auto& r : records) {
    if (r.surgery_date.year != test_year) out.push_back(r);
  }
  return out;
}

inline std::vector<durastack::CaseRecord> test_only(const std::vector<durastack::CaseRecord>& records,
                                                    int test_year = 2024) {
  std::vector<durastack::CaseRecord> out;
  for (const auto& r : records) {
    if (r.surgery_date.year == test_year) out.push_back(r);
  }
  return out;
}

/// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("durastack-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures

#include "durastack/pipeline.hpp"

namespace fixtures {

/// Tiny grids and chains so a full develop run takes about a second.
inline durastack::RunConfig small_run_config(std::uint64_t seed = 20240101) {
  using durastack::LearnerKind;
  durastack::RunConfig c;
  c.m = 2;
  c.iterations = 2;
  c.seed = seed;
  c.bootstrap_b = 100;
  c.grids.axes[LearnerKind::elastic_net] = {{"lambda", {"0.001", "0.01"}}, {"alpha", {"0.5"}}};
  c.grids.axes[LearnerKind::gam] = {{"lambda_s", {"1"}}, {"knots", {"8"}}};
  c.grids.axes[LearnerKind::random_forest] = {{"n_trees", {"15"}}, {"mtry", {"p/3"}}, {"min_node", {"5"}}};
  c.grids.axes[LearnerKind::gbt] = {
      {"n_rounds", {"20"}}, {"depth", {"2"}}, {"learning_rate", {"0.1"}}, {"subsample", {"0.8"}}};
  return c;
}

struct SmallStudy {
  std::vector<durastack::CaseRecord> development;
  std::vector<durastack::CaseRecord> test;
  durastack::DevelopResult result;
};

/// Masked desk cohort developed once per process.
inline const SmallStudy& small_study() {
  static const SmallStudy study = [] {
    auto c = desk_config(60, 60, 77);
    auto gen = durastack::generate(c);
    auto masked = durastack::mask(gen.records, c.missingness, 78);
    SmallStudy s;
    s.development = development_only(masked.records);
    s.test = test_only(masked.records);
    s.result = durastack::develop(s.development, small_run_config());
    return s;
  }();
  return study;
}

}  // namespace fixtures
