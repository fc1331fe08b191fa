#include <numeric>
#include <set>
#include <sstream>

#include <doctest.h>

#include "durastack/errors.hpp"
#include "durastack/ingest.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace durastack;

namespace {

std::string csv_of(const std::vector<CaseRecord>& records) {
  std::ostringstream out;
  write_csv(out, records);
  return out.str();
}

bool satisfies_all(const CaseRecord& r) {
  return !r.emergency && r.surgery_date.weekday() <= 5 && (!r.asa || *r.asa <= 4) &&
         r.actual_duration_min && *r.actual_duration_min > 0 && *r.actual_duration_min <= 1440;
}

// Ten hand-enumerated rows: 2 emergencies, 1 Sunday, 1 asa 5, 1 missing outcome.
std::vector<CaseRecord> ten_row_toy() {
  std::vector<CaseRecord> rows;
  for (int i = 0; i < 10; ++i) rows.push_back(fixtures::make_case("r" + std::to_string(i), "S1", {2021, 3, 1 + i % 5}));
  rows[1].emergency = true;
  rows[4].emergency = true;
  rows[6].surgery_date = {2021, 3, 7};  // Sunday
  rows[7].asa = 5;
  rows[9].actual_duration_min.reset();
  return rows;
}

}  // namespace

TEST_SUITE("ingest") {

TEST_CASE("two valid rows parse cleanly") {
  std::istringstream in(csv_of({fixtures::make_case("a"), fixtures::make_case("b")}));
  auto parsed = parse_csv(in);
  CHECK(parsed.records.size() == 2);
  CHECK(parsed.errors.empty());
  CHECK(parsed.records[1] == fixtures::make_case("b"));
}

TEST_CASE("missing header column is fatal and named") {
  auto text = csv_of({fixtures::make_case("a")});
  auto pos = text.find("site,");
  text.erase(pos, 5);
  std::istringstream in(text);
  try {
    parse_csv(in);
    FAIL("expected a DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("site") != std::string::npos);
  }
}

TEST_CASE("a bad date rejects only its row") {
  auto text = csv_of({fixtures::make_case("a"), fixtures::make_case("b")});
  auto pos = text.rfind("2021-03-04");
  text.replace(pos, 10, "2021-13-04");
  std::istringstream in(text);
  auto parsed = parse_csv(in);
  CHECK(parsed.records.size() == 1);
  REQUIRE(parsed.errors.size() == 1);
  CHECK(parsed.errors[0].case_id == "b");
  CHECK(parsed.errors[0].line == 3);
  CHECK(parsed.errors[0].errors[0].field == "surgery_date");
}

TEST_CASE("quoted fields and CRLF endings are accepted") {
  auto text = csv_of({fixtures::make_case("a")});
  std::string crlf;
  for (char c : text) {
    if (c == '\n') crlf += '\r';
    crlf += c;
  }
  auto pos = crlf.find("\r\na");
  crlf.replace(pos + 2, 1, "\"a\"");
  std::istringstream in(crlf);
  auto parsed = parse_csv(in);
  REQUIRE(parsed.records.size() == 1);
  CHECK(parsed.records[0].case_id == "a");
}

TEST_CASE("round trip through csv preserves records") {
  auto gen = generate(fixtures::desk_config(30, 10, 3));
  auto masked = mask(gen.records, default_missingness(), 4);
  std::istringstream in(csv_of(masked.records));
  auto parsed = parse_csv(in);
  CHECK(parsed.errors.empty());
  CHECK(parsed.records == masked.records);
}

TEST_CASE("ten-row toy keeps five") {
  auto sel = select_cohort(ten_row_toy());
  CHECK(sel.cohort.size() == 5);
  const auto& st = sel.report.stages;
  REQUIRE(st.size() == 5);
  CHECK(st[0].name == "raw");
  CHECK(st[0].remaining == 10);
  CHECK(st[1].remaining == 8);
  CHECK(st[2].remaining == 7);
  CHECK(st[3].remaining == 6);
  CHECK(st[4].remaining == 5);
  CHECK(st[1].excluded_ids == std::vector<std::string>{"r1", "r4"});
  CHECK(st[2].excluded_ids == std::vector<std::string>{"r6"});
}

TEST_CASE("empty input gives an all-zero cascade") {
  auto sel = select_cohort({});
  CHECK(sel.cohort.empty());
  REQUIRE(sel.report.stages.size() == 5);
  for (const auto& s : sel.report.stages) CHECK(s.remaining == 0);
}

TEST_CASE("absent asa is retained and implausible outcomes dropped") {
  auto rows = ten_row_toy();
  rows[0].asa.reset();
  rows[2].actual_duration_min = 1441.0;
  auto sel = select_cohort(rows);
  CHECK(sel.cohort.size() == 4);
  CHECK(sel.cohort[0].case_id == "r0");
}

TEST_CASE("selection is idempotent and separates on the stated criteria") {
  auto c = fixtures::desk_config(200, 100, 17);
  c.rate_emergency = 0.1;
  c.rate_weekend = 0.05;
  c.rate_asa5 = 0.02;
  c.rate_missing_outcome = 0.02;
  c.rate_implausible_outcome = 0.01;
  auto gen = generate(c);
  auto masked = mask(gen.records, default_missingness(), 2);
  auto once = select_cohort(masked.records);
  auto twice = select_cohort(once.cohort);
  CHECK(once.cohort == twice.cohort);
  std::set<std::string> kept;
  for (const auto& r : once.cohort) {
    kept.insert(r.case_id);
    CHECK(satisfies_all(r));
  }
  std::size_t excluded = 0;
  for (const auto& r : masked.records) {
    if (!kept.contains(r.case_id)) {
      ++excluded;
      CHECK_FALSE(satisfies_all(r));
    }
  }
  CHECK(excluded > 0);
}

TEST_CASE("describe: type-7 quartiles of three ages") {
  std::vector<CaseRecord> rows;
  for (double age : {50.0, 70.0, 60.0}) {
    rows.push_back(fixtures::make_case("a" + std::to_string(rows.size())));
    rows.back().age_years = age;
  }
  auto t = describe_cohort(rows, {});
  const auto* row = t.find("Age (years)");
  REQUIRE(row);
  REQUIRE(row->cells[0].quartiles);
  const auto& q = *row->cells[0].quartiles;
  CHECK(q[0] == 60.0);
  CHECK(q[1] == oracle::quantile7({50, 60, 70}, 0.25));
  CHECK(q[1] == 55.0);
  CHECK(q[2] == 65.0);
  CHECK(row->cells[0].text == "60.00 (55.00, 65.00)");
}

TEST_CASE("describe: continuous and missing formats") {
  std::vector<CaseRecord> rows;
  const double sched[] = {75, 75, 150, 300, 300};
  for (int i = 0; i < 25; ++i) {
    rows.push_back(fixtures::make_case("c" + std::to_string(i)));
    if (i < 17) {
      rows.back().scheduled_duration_min = sched[i % 5];
    } else {
      rows.back().scheduled_duration_min.reset();
    }
  }
  std::vector<double> v;
  for (int i = 0; i < 17; ++i) v.push_back(sched[i % 5]);
  auto t = describe_cohort(rows, {});
  const auto* row = t.find("Scheduled Surgery Duration (min)");
  REQUIRE(row);
  CHECK(row->cells[0].quartiles->at(0) == oracle::quantile7(v, 0.5));
  const auto* missing = t.find("Scheduled Surgery Duration (min)", "Missing %");
  REQUIRE(missing);
  CHECK(missing->cells[0].text == "32%");

  std::vector<CaseRecord> five;
  for (int i = 0; i < 5; ++i) {
    five.push_back(fixtures::make_case("f" + std::to_string(i)));
    five.back().scheduled_duration_min = sched[i];
  }
  t = describe_cohort(five, {});
  CHECK(t.find("Scheduled Surgery Duration (min)")->cells[0].text == "150.00 (75.00, 300.00)");
}

TEST_CASE("describe: fully missing field") {
  std::vector<CaseRecord> rows{fixtures::make_case("a"), fixtures::make_case("b")};
  for (auto& r : rows) r.bmi.reset();
  auto t = describe_cohort(rows, {});
  const auto* row = t.find("Body Mass Index");
  REQUIRE(row);
  CHECK(row->cells[0].text.empty());
  CHECK(t.find("Body Mass Index", "Missing %")->cells[0].text == "100%");
}

TEST_CASE("describe: categorical percentages sum to 100") {
  auto gen = generate(fixtures::desk_config(100, 50, 9));
  auto masked = mask(gen.records, default_missingness(), 10);
  std::map<std::string, Split> split;
  for (const auto& r : masked.records) split[r.case_id] = r.surgery_date.year == 2024 ? Split::test : Split::development;
  auto t = describe_cohort(masked.records, split);
  REQUIRE(t.columns.size() == 3);
  CHECK(t.column_n[0] == t.column_n[1] + t.column_n[2]);
  for (const char* var : {"Year of Surgery", "Month of Surgery", "Weekday of Surgery", "ASA Physical Status Classification"}) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      double sum = 0.0;
      for (const auto& row : t.rows) {
        if (row.variable == var && row.level != "Missing %" && row.cells[c].percent) sum += *row.cells[c].percent;
      }
      if (sum > 0) CHECK_MESSAGE(sum == doctest::Approx(100.0).epsilon(1e-9), var);
    }
  }
}

}
