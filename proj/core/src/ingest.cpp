#include "durastack/ingest.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "durastack/csv.hpp"
#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"
#include "durastack/metrics.hpp"

namespace durastack {

ParsedCases parse_csv(std::istream& in) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header || (header->size() == 1 && detail::trim((*header)[0]).empty())) {
    throw DataError("empty case file: no header row");
  }
  if (!header->empty() && header->front().rfind("\xEF\xBB\xBF", 0) == 0) {
    header->front().erase(0, 3);
  }
  std::set<std::string, std::less<>> seen;
  for (auto& name : *header) {
    name = std::string(detail::trim(name));
    if (!seen.insert(name).second) throw DataError(fmt::format("duplicated header column '{}'", name));
    if (std::find(kCsvHeader.begin(), kCsvHeader.end(), name) == kCsvHeader.end()) {
      throw DataError(fmt::format("unknown header column '{}'", name));
    }
  }
  for (auto name : kCsvHeader) {
    if (!seen.contains(name)) throw DataError(fmt::format("header is missing column '{}'", name));
  }

  ParsedCases out;
  while (auto fields = reader.next()) {
    if (fields->size() == 1 && detail::trim((*fields)[0]).empty()) continue;  // blank line
    const std::size_t line = reader.line();
    if (fields->size() != header->size()) {
      out.errors.push_back({line, fields->empty() ? std::string() : fields->front(),
                            {{"row", fmt::format("expected {} fields, found {}", header->size(), fields->size())}}});
      continue;
    }
    RawRow raw;
    for (std::size_t i = 0; i < fields->size(); ++i) raw.emplace((*header)[i], std::move((*fields)[i]));
    auto validated = validate_record(raw);
    if (validated.ok()) {
      out.records.push_back(std::move(*validated.record));
    } else {
      out.errors.push_back({line, raw["case_id"], std::move(validated.errors)});
    }
  }
  return out;
}

namespace {

std::string opt_bool(const std::optional<bool>& v) { return v ? (*v ? "1" : "0") : ""; }
std::string opt_num(const std::optional<double>& v) { return v ? detail::format_double(*v) : ""; }

}  // namespace

std::vector<std::string> to_csv_fields(const CaseRecord& r) {
  std::vector<std::string> f;
  f.reserve(kCsvHeader.size());
  f.push_back(r.case_id);
  f.push_back(r.site_id);
  f.push_back(r.surgery_date.iso());
  f.push_back(r.emergency ? "1" : "0");
  f.push_back(opt_bool(r.admission));
  f.push_back(opt_num(r.scheduled_duration_min));
  f.push_back(opt_bool(r.general_anaesthesia));
  for (std::size_t k = 0; k < kPositionCount; ++k) {
    f.push_back(r.positions ? ((*r.positions)[k] ? "1" : "0") : "");
  }
  f.push_back(r.sex == Sex::male ? "M" : "F");
  f.push_back(opt_num(r.age_years));
  f.push_back(opt_num(r.bmi));
  f.push_back(r.allergy ? "1" : "0");
  f.push_back(r.infection ? "1" : "0");
  f.push_back(r.comorbidity ? "1" : "0");
  f.push_back(r.asa ? std::to_string(*r.asa) : "");
  f.push_back(opt_num(r.actual_duration_min));
  return f;
}

void write_csv(std::ostream& out, std::span<const CaseRecord> records) {
  csv::write_row(out, std::vector<std::string>(kCsvHeader.begin(), kCsvHeader.end()));
  for (const auto& r : records) csv::write_row(out, to_csv_fields(r));
}

bool plausible_outcome(const std::optional<double>& minutes) {
  return minutes && *minutes > 0.0 && *minutes <= kMaxPlausibleMinutes;
}

CohortSelection select_cohort(std::vector<CaseRecord> records, bool keep_excluded_ids) {
  CohortSelection out;
  out.report.stages.push_back({"raw", records.size(), {}});

  auto stage = [&](std::string name, auto keep) {
    ExclusionStage s{std::move(name), 0, {}};
    std::vector<CaseRecord> kept;
    kept.reserve(records.size());
    for (auto& r : records) {
      if (keep(r)) {
        kept.push_back(std::move(r));
      } else if (keep_excluded_ids) {
        s.excluded_ids.push_back(r.case_id);
      }
    }
    records = std::move(kept);
    s.remaining = records.size();
    out.report.stages.push_back(std::move(s));
  };

  stage("non_emergency", [](const CaseRecord& r) { return !r.emergency; });
  stage("weekday", [](const CaseRecord& r) { return r.surgery_date.weekday() <= 5; });
  stage("asa_1_to_4", [](const CaseRecord& r) { return !r.asa || (*r.asa >= 1 && *r.asa <= 4); });
  stage("plausible_outcome", [](const CaseRecord& r) { return plausible_outcome(r.actual_duration_min); });
  out.cohort = std::move(records);
  return out;
}

nlohmann::json ExclusionReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : stages) {
    j.push_back({{"stage", s.name}, {"remaining", s.remaining}, {"excluded_ids", s.excluded_ids}});
  }
  return {{"stages", j}};
}

void ExclusionReport::write_csv(std::ostream& out) const {
  out << "stage,remaining,excluded\n";
  std::size_t previous = stages.empty() ? 0 : stages.front().remaining;
  for (const auto& s : stages) {
    out << s.name << ',' << s.remaining << ',' << (previous - s.remaining) << '\n';
    previous = s.remaining;
  }
}

// ---------------------------------------------------------------------------
// Descriptive table

namespace {

std::string percent_text(double pct) {
  auto s = fmt::format("{:.1f}", pct);
  if (s.size() > 2 && s.compare(s.size() - 2, 2, ".0") == 0) s.resize(s.size() - 2);
  return s + "%";
}

struct Column {
  std::vector<const CaseRecord*> cases;
};

class TableBuilder {
 public:
  explicit TableBuilder(std::vector<Column> columns) : columns_(std::move(columns)) {}

  // Categorical variable with levels; level_of returns nullopt when missing.
  template <typename LevelOf>
  void categorical(const std::string& variable, const std::vector<std::pair<int, std::string>>& levels,
                   LevelOf level_of, bool missing_row) {
    std::vector<std::vector<std::size_t>> counts(columns_.size(), std::vector<std::size_t>(levels.size()));
    std::vector<std::size_t> observed(columns_.size()), missing(columns_.size());
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      for (const auto* r : columns_[c].cases) {
        auto lv = level_of(*r);
        if (!lv) {
          ++missing[c];
          continue;
        }
        ++observed[c];
        for (std::size_t k = 0; k < levels.size(); ++k) {
          if (levels[k].first == *lv) ++counts[c][k];
        }
      }
    }
    for (std::size_t k = 0; k < levels.size(); ++k) {
      DescriptiveRow row{variable, levels[k].second, {}};
      for (std::size_t c = 0; c < columns_.size(); ++c) row.cells.push_back(count_cell(counts[c][k], observed[c]));
      rows_.push_back(std::move(row));
    }
    if (missing_row) add_missing(variable, missing);
  }

  template <typename Flag>
  void flag(const std::string& variable, Flag flag_of, bool missing_row) {
    categorical(variable, {{1, ""}}, [&](const CaseRecord& r) -> std::optional<int> {
      auto v = flag_of(r);
      if (!v) return std::nullopt;
      return *v ? 1 : 0;
    }, missing_row);
  }

  template <typename Value>
  void continuous(const std::string& variable, Value value_of, bool missing_row) {
    std::vector<std::size_t> missing(columns_.size());
    DescriptiveRow row{variable, "", {}};
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      std::vector<double> values;
      for (const auto* r : columns_[c].cases) {
        auto v = value_of(*r);
        if (v) {
          values.push_back(*v);
        } else {
          ++missing[c];
        }
      }
      DescriptiveCell cell;
      if (!values.empty()) {
        std::array<double, 3> q{quantile(values, 0.5), quantile(values, 0.25), quantile(values, 0.75)};
        cell.text = fmt::format("{:.2f} ({:.2f}, {:.2f})", q[0], q[1], q[2]);
        cell.quartiles = q;
        cell.count = values.size();
      }
      row.cells.push_back(std::move(cell));
    }
    rows_.push_back(std::move(row));
    if (missing_row) add_missing(variable, missing);
  }

  std::vector<DescriptiveRow> take() { return std::move(rows_); }

 private:
  static DescriptiveCell count_cell(std::size_t count, std::size_t observed) {
    DescriptiveCell cell;
    cell.count = count;
    if (observed > 0) {
      cell.percent = 100.0 * static_cast<double>(count) / static_cast<double>(observed);
      cell.text = fmt::format("{:.1f}% ({})", *cell.percent, count);
    }
    return cell;
  }

  void add_missing(const std::string& variable, const std::vector<std::size_t>& missing) {
    bool any = false;
    for (auto m : missing) any = any || m > 0;
    if (!any) return;
    DescriptiveRow row{variable, "Missing %", {}};
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      DescriptiveCell cell;
      cell.count = missing[c];
      if (!columns_[c].cases.empty()) {
        cell.percent = 100.0 * static_cast<double>(missing[c]) / static_cast<double>(columns_[c].cases.size());
        cell.text = percent_text(*cell.percent);
      }
      row.cells.push_back(std::move(cell));
    }
    rows_.push_back(std::move(row));
  }

  std::vector<Column> columns_;
  std::vector<DescriptiveRow> rows_;
};

}  // namespace

DescriptiveTable describe_cohort(std::span<const CaseRecord> cohort,
                                 const std::map<std::string, Split>& split_labels) {
  if (cohort.empty()) throw DataError("cannot describe an empty cohort");
  DescriptiveTable table;
  std::vector<Column> columns(1);
  table.columns.push_back("Overall");
  Column dev, test;
  for (const auto& r : cohort) {
    columns[0].cases.push_back(&r);
    auto it = split_labels.find(r.case_id);
    if (it == split_labels.end()) continue;
    (it->second == Split::development ? dev : test).cases.push_back(&r);
  }
  if (!split_labels.empty()) {
    table.columns.push_back("Development");
    columns.push_back(std::move(dev));
    table.columns.push_back("Test");
    columns.push_back(std::move(test));
  }
  for (const auto& c : columns) table.column_n.push_back(c.cases.size());

  std::set<int> years;
  std::set<int> asa_levels = {1, 2, 3, 4};
  bool weekend = false;
  for (const auto& r : cohort) {
    years.insert(r.surgery_date.year);
    if (r.asa) asa_levels.insert(*r.asa);
    weekend = weekend || r.surgery_date.weekday() > 5;
  }

  TableBuilder b(std::move(columns));
  std::vector<std::pair<int, std::string>> year_levels, month_levels, weekday_levels, asa;
  for (int y : years) year_levels.emplace_back(y, std::to_string(y));
  for (int m = 1; m <= 12; ++m) month_levels.emplace_back(m, std::to_string(m));
  static const char* kDays[] = {"Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"};
  for (int d = 1; d <= (weekend ? 7 : 5); ++d) weekday_levels.emplace_back(d, kDays[d - 1]);
  for (int a : asa_levels) asa.emplace_back(a, std::to_string(a));

  b.categorical("Year of Surgery", year_levels,
                [](const CaseRecord& r) -> std::optional<int> { return r.surgery_date.year; }, false);
  b.categorical("Month of Surgery", month_levels,
                [](const CaseRecord& r) -> std::optional<int> { return r.surgery_date.month; }, false);
  b.categorical("Weekday of Surgery", weekday_levels,
                [](const CaseRecord& r) -> std::optional<int> { return r.surgery_date.weekday(); }, false);
  b.flag("Admission", [](const CaseRecord& r) { return r.admission; }, true);
  b.flag("General anaesthesia", [](const CaseRecord& r) { return r.general_anaesthesia; }, true);
  static const char* kPositions[] = {"Supine Position", "Prone Position", "Sitting Position",
                                     "Lithotomy Position", "Lateral Position", "Other Position"};
  for (std::size_t k = 0; k < kPositionCount; ++k) {
    b.categorical("Surgical position", {{1, kPositions[k]}},
                  [k](const CaseRecord& r) -> std::optional<int> {
                    if (!r.positions) return std::nullopt;
                    return (*r.positions)[k] ? 1 : 0;
                  },
                  k + 1 == kPositionCount);
  }
  b.continuous("Scheduled Surgery Duration (min)", [](const CaseRecord& r) { return r.scheduled_duration_min; }, true);
  b.continuous("Actual Surgery Duration (minutes)", [](const CaseRecord& r) { return r.actual_duration_min; }, true);
  b.flag("Sex: Female", [](const CaseRecord& r) -> std::optional<bool> { return r.sex == Sex::female; }, false);
  b.continuous("Age (years)", [](const CaseRecord& r) { return r.age_years; }, true);
  b.continuous("Body Mass Index", [](const CaseRecord& r) { return r.bmi; }, true);
  b.flag("History of Allergy", [](const CaseRecord& r) -> std::optional<bool> { return r.allergy; }, false);
  b.flag("Presence of Infection", [](const CaseRecord& r) -> std::optional<bool> { return r.infection; }, false);
  b.flag("Comorbidity", [](const CaseRecord& r) -> std::optional<bool> { return r.comorbidity; }, false);
  b.categorical("ASA Physical Status Classification", asa,
                [](const CaseRecord& r) -> std::optional<int> { return r.asa; }, true);
  table.rows = b.take();
  return table;
}

const DescriptiveRow* DescriptiveTable::find(std::string_view variable, std::string_view level) const {
  for (const auto& r : rows) {
    if (r.variable == variable && r.level == level) return &r;
  }
  return nullptr;
}

void DescriptiveTable::write_csv(std::ostream& out) const {
  std::vector<std::string> header = {"characteristic", "level"};
  for (std::size_t c = 0; c < columns.size(); ++c) {
    header.push_back(fmt::format("{} N = {}", columns[c], column_n[c]));
  }
  csv::write_row(out, header);
  for (const auto& r : rows) {
    std::vector<std::string> f = {r.variable, r.level};
    for (const auto& cell : r.cells) f.push_back(cell.text);
    csv::write_row(out, f);
  }
}

nlohmann::json DescriptiveTable::to_json() const {
  nlohmann::json j;
  auto& cols = j["columns"] = nlohmann::json::array();
  for (std::size_t c = 0; c < columns.size(); ++c) cols.push_back({{"name", columns[c]}, {"n", column_n[c]}});
  auto& rs = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : r.cells) {
      nlohmann::json cj = {{"text", cell.text}};
      if (cell.percent) cj["percent"] = *cell.percent;
      if (cell.count) cj["count"] = *cell.count;
      if (cell.quartiles) {
        cj["median"] = (*cell.quartiles)[0];
        cj["q1"] = (*cell.quartiles)[1];
        cj["q3"] = (*cell.quartiles)[2];
      }
      cells.push_back(std::move(cj));
    }
    rs.push_back({{"characteristic", r.variable}, {"level", r.level}, {"cells", std::move(cells)}});
  }
  return j;
}

}  // namespace durastack
