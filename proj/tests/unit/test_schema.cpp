#include <cmath>
#include <cstring>

#include <doctest.h>

#include "durastack/schema.hpp"
#include "support/fixtures.hpp"

using namespace durastack;

namespace {

bool has_error(const ValidatedRecord& v, std::string_view field) {
  for (const auto& e : v.errors) {
    if (e.field == field) return true;
  }
  return false;
}

bool bit_identical(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_SUITE("schema") {

TEST_CASE("complete row validates with every field present") {
  auto raw = fixtures::raw_of(fixtures::make_case("c1"));
  auto v = validate_record(raw);
  REQUIRE(v.ok());
  CHECK(v.errors.empty());
  const auto& r = *v.record;
  CHECK(r.admission.has_value());
  CHECK(r.scheduled_duration_min.has_value());
  CHECK(r.general_anaesthesia.has_value());
  CHECK(r.positions.has_value());
  CHECK(r.age_years.has_value());
  CHECK(r.bmi.has_value());
  CHECK(r.asa.has_value());
  CHECK(r.actual_duration_min.has_value());
  CHECK(r == fixtures::make_case("c1"));
}

TEST_CASE("asa outside 1..5 is a field error") {
  auto raw = fixtures::raw_of(fixtures::make_case("c1"));
  raw["asa"] = "7";
  auto v = validate_record(raw);
  CHECK_FALSE(v.ok());
  CHECK(has_error(v, "asa"));
}

TEST_CASE("non-positive outcome is a field error") {
  auto raw = fixtures::raw_of(fixtures::make_case("c1"));
  raw["actual_duration_min"] = "-5";
  auto v = validate_record(raw);
  CHECK_FALSE(v.ok());
  CHECK(has_error(v, "actual_duration_min"));
}

TEST_CASE("dates are strict") {
  CHECK(Date::parse("2021-03-04").has_value());
  CHECK_FALSE(Date::parse("2021-02-30").has_value());
  CHECK_FALSE(Date::parse("2021-3-4").has_value());
  CHECK_FALSE(Date::parse("04/03/2021").has_value());
  CHECK(Date::parse("2024-02-29").has_value());
  CHECK(Date{2021, 3, 4}.weekday() == 4);
  CHECK(Date{2022, 12, 31}.weekday() == 6);
}

TEST_CASE("partial position block is rejected") {
  auto raw = fixtures::raw_of(fixtures::make_case("c1"));
  raw["pos_prone"] = "";
  CHECK_FALSE(validate_record(raw).ok());
}

TEST_CASE("cluster_of uses site and calendar year") {
  auto a = fixtures::make_case("a", "S1", {2021, 3, 4});
  auto b = fixtures::make_case("b", "S2", {2022, 12, 31});
  auto c = fixtures::make_case("c", "S1", {2022, 3, 4});
  CHECK(cluster_of(a) == ClusterKey{"S1", 2021});
  CHECK(cluster_of(b) == ClusterKey{"S2", 2022});
  CHECK(cluster_of(a) != cluster_of(c));
  CHECK(cluster_of(a).label() == "S1 at 2021");
}

TEST_CASE("outcome enters as its natural log") {
  std::vector<CaseRecord> cohort{fixtures::make_case("a", "S1", {2021, 1, 4}, 127.0),
                                 fixtures::make_case("b", "S1", {2021, 3, 4}, 60.0)};
  auto e = encode(cohort);
  CHECK(e.y(0) == doctest::Approx(4.8442).epsilon(1e-4));
  CHECK(e.y(0) == std::log(127.0));
}

TEST_CASE("reference month encodes as all-zero indicators") {
  std::vector<CaseRecord> cohort{fixtures::make_case("a", "S1", {2021, 1, 4})};
  auto e = encode(cohort);
  int indicators = 0;
  for (std::size_t j = 0; j < e.meta.width(); ++j) {
    if (e.meta.features[j].source == "month") {
      ++indicators;
      CHECK(e.X(0, static_cast<Eigen::Index>(j)) == 0.0);
    }
  }
  CHECK(indicators == 11);
}

TEST_CASE("test cohort reuses the development layout") {
  std::vector<CaseRecord> dev{fixtures::make_case("a", "S1", {2021, 3, 4}),
                              fixtures::make_case("b", "S1", {2022, 3, 4})};
  std::vector<CaseRecord> test{fixtures::make_case("t", "S1", {2024, 3, 4})};
  auto d = encode(dev);
  auto t = encode(test, &d.meta);
  CHECK(t.meta.column_names() == d.meta.column_names());
  CHECK(t.meta.fingerprint() == d.meta.fingerprint());
  for (std::size_t j = 0; j < d.meta.width(); ++j) {
    if (d.meta.features[j].source == "year") CHECK(t.X(0, static_cast<Eigen::Index>(j)) == 0.0);
  }
}

TEST_CASE("re-encoding with its own meta is bit-identical") {
  auto gen = generate(fixtures::desk_config(60, 30, 5));
  auto masked = mask(gen.records, default_missingness(), 6);
  auto first = encode(masked.records);
  auto again = encode(masked.records, &first.meta);
  CHECK(bit_identical(first.X, again.X));
  CHECK((first.missing_mask == again.missing_mask).all());
  auto round = EncodingMeta::from_json(first.meta.to_json());
  CHECK(round == first.meta);
}

TEST_CASE("every predictor owns a column and nothing surgeon-related exists") {
  auto meta = make_encoding_meta({2021, 2022});
  for (const auto& name : predictor_field_names()) {
    if (name == "surgery_date") continue;
    bool found = false;
    for (const auto& f : meta.features) found = found || f.source == name || f.name == name;
    CHECK_MESSAGE(found, name);
  }
  for (const char* derived : {"year", "month", "weekday"}) {
    bool found = false;
    for (const auto& f : meta.features) found = found || f.source == derived;
    CHECK_MESSAGE(found, derived);
  }
  for (const auto& f : meta.features) {
    CHECK(f.name.find("surgeon") == std::string::npos);
    CHECK(f.name.find("site") == std::string::npos);
  }
}

TEST_CASE("log transform preserves outcome order") {
  std::vector<CaseRecord> cohort;
  for (int i = 0; i < 50; ++i) {
    cohort.push_back(fixtures::make_case("c" + std::to_string(i), "S1", {2021, 3, 4}, 5.0 + 13.7 * ((i * 37) % 50)));
  }
  auto e = encode(cohort);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    for (std::size_t j = 0; j < cohort.size(); ++j) {
      CHECK((*cohort[i].actual_duration_min < *cohort[j].actual_duration_min) ==
            (e.y(static_cast<Eigen::Index>(i)) < e.y(static_cast<Eigen::Index>(j))));
    }
  }
}

TEST_CASE("asa enters as indicators of 2, 3 and 4") {
  auto meta = make_encoding_meta({2021});
  CHECK(meta.column("asa_2").has_value());
  CHECK(meta.column("asa_3").has_value());
  CHECK(meta.column("asa_4").has_value());
  CHECK_FALSE(meta.column("asa_1").has_value());
  auto r = fixtures::make_case("a");
  r.asa = 3;
  auto row = encode_predictors(predictors_of(r), meta);
  CHECK(row(static_cast<Eigen::Index>(*meta.column("asa_3"))) == 1.0);
  CHECK(row(static_cast<Eigen::Index>(*meta.column("asa_2"))) == 0.0);
  r.asa.reset();
  row = encode_predictors(predictors_of(r), meta);
  CHECK(std::isnan(row(static_cast<Eigen::Index>(*meta.column("asa_3")))));
}

TEST_CASE("request parsing rejects unknown names and asa 5") {
  RawRow raw{{"bmi", "22"}, {"asa", "5"}};
  auto p = parse_predictor_input(raw);
  CHECK_FALSE(p.errors.empty());
  RawRow unknown{{"surgeon_id", "7"}};
  p = parse_predictor_input(unknown);
  REQUIRE(p.errors.size() == 1);
  CHECK(p.errors[0].field == "surgeon_id");
  RawRow partial{{"bmi", "22"}};
  p = parse_predictor_input(partial);
  CHECK(p.errors.empty());
  auto absent = p.input.absent_fields();
  CHECK(std::find(absent.begin(), absent.end(), "bmi") == absent.end());
  CHECK(std::find(absent.begin(), absent.end(), "age_years") != absent.end());
}

}
