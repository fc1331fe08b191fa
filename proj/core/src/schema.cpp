#include "durastack/schema.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"
#include "durastack/random.hpp"

namespace durastack {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
  static constexpr int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  return m == 2 && is_leap(y) ? 29 : kDays[m - 1];
}

bool blank(const RawRow& raw, std::string_view key) {
  auto it = raw.find(key);
  return it == raw.end() || detail::trim(it->second).empty();
}

std::string_view value(const RawRow& raw, std::string_view key) {
  auto it = raw.find(key);
  return it == raw.end() ? std::string_view{} : detail::trim(it->second);
}

std::optional<Sex> parse_sex(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "f" || lower == "female") return Sex::female;
  if (lower == "m" || lower == "male") return Sex::male;
  return std::nullopt;
}

// Field parsers shared by CSV validation and request parsing. Each returns
// the parsed value or appends an error.
class FieldReader {
 public:
  FieldReader(const RawRow& raw, std::vector<FieldError>& errors) : raw_(raw), errors_(errors) {}

  std::optional<bool> boolean(std::string_view key, bool required) {
    if (blank(raw_, key)) {
      if (required) fail(key, "required boolean is missing");
      return std::nullopt;
    }
    auto v = detail::parse_bool(value(raw_, key));
    if (!v) fail(key, fmt::format("expected 0 or 1, got '{}'", value(raw_, key)));
    return v;
  }

  std::optional<double> positive(std::string_view key, std::string_view what = "value") {
    if (blank(raw_, key)) return std::nullopt;
    auto v = detail::parse_double(value(raw_, key));
    if (!v) {
      fail(key, fmt::format("unparseable number '{}'", value(raw_, key)));
      return std::nullopt;
    }
    if (*v <= 0.0) {
      fail(key, fmt::format("non-positive {} {}", what, *v));
      return std::nullopt;
    }
    return v;
  }

  std::optional<double> non_negative(std::string_view key) {
    if (blank(raw_, key)) return std::nullopt;
    auto v = detail::parse_double(value(raw_, key));
    if (!v) {
      fail(key, fmt::format("unparseable number '{}'", value(raw_, key)));
      return std::nullopt;
    }
    if (*v < 0.0) {
      fail(key, fmt::format("negative value {}", *v));
      return std::nullopt;
    }
    return v;
  }

  std::optional<int> asa(std::string_view key, int max_class) {
    if (blank(raw_, key)) return std::nullopt;
    auto v = detail::parse_int<int>(value(raw_, key));
    if (!v) {
      fail(key, fmt::format("unparseable class '{}'", value(raw_, key)));
      return std::nullopt;
    }
    if (*v < 1 || *v > max_class) {
      fail(key, fmt::format("out of range: {} not in 1..{}", *v, max_class));
      return std::nullopt;
    }
    return v;
  }

  std::optional<Date> date(std::string_view key, bool required) {
    if (blank(raw_, key)) {
      if (required) fail(key, "required date is missing");
      return std::nullopt;
    }
    auto d = Date::parse(value(raw_, key));
    if (!d) fail(key, fmt::format("unparseable date '{}' (expected YYYY-MM-DD)", value(raw_, key)));
    return d;
  }

  std::optional<Sex> sex(std::string_view key, bool required) {
    if (blank(raw_, key)) {
      if (required) fail(key, "required sex code is missing");
      return std::nullopt;
    }
    auto s = parse_sex(value(raw_, key));
    if (!s) fail(key, fmt::format("unknown sex code '{}'", value(raw_, key)));
    return s;
  }

  void fail(std::string_view key, std::string reason) {
    errors_.push_back({std::string(key), std::move(reason)});
  }

 private:
  const RawRow& raw_;
  std::vector<FieldError>& errors_;
};

}  // namespace

// ---------------------------------------------------------------------------
// Date

std::optional<Date> Date::parse(std::string_view text) {
  text = detail::trim(text);
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  auto y = detail::parse_int<int>(text.substr(0, 4));
  auto m = detail::parse_int<int>(text.substr(5, 2));
  auto d = detail::parse_int<int>(text.substr(8, 2));
  if (!y || !m || !d) return std::nullopt;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (text[i] < '0' || text[i] > '9') return std::nullopt;
  }
  Date date{*y, *m, *d};
  if (!date.valid()) return std::nullopt;
  return date;
}

bool Date::valid() const {
  return year >= 1 && month >= 1 && month <= 12 && day >= 1 && day <= days_in_month(year, month);
}

std::string Date::iso() const { return fmt::format("{:04d}-{:02d}-{:02d}", year, month, day); }

int Date::weekday() const {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{static_cast<unsigned>(month)},
                           std::chrono::day{static_cast<unsigned>(day)}};
  return static_cast<int>(std::chrono::weekday{sys_days{ymd}}.iso_encoding());
}

// ---------------------------------------------------------------------------
// Records

std::string ClusterKey::label() const { return fmt::format("{} at {}", site_id, year); }

std::uint64_t ClusterKey::hash() const {
  return fnv1a64(fmt::format("{}|{}", site_id, year));
}

ClusterKey cluster_of(const CaseRecord& record) {
  return {record.site_id, record.surgery_date.year};
}

ValidatedRecord validate_record(const RawRow& raw) {
  ValidatedRecord out;
  auto& errors = out.errors;
  FieldReader read(raw, errors);
  CaseRecord r;

  r.case_id = std::string(value(raw, "case_id"));
  if (r.case_id.empty()) read.fail("case_id", "required identifier is missing");
  r.site_id = std::string(value(raw, "site"));
  if (r.site_id.empty()) read.fail("site", "required site is missing");
  if (auto d = read.date("surgery_date", true)) r.surgery_date = *d;
  if (auto e = read.boolean("emergency", true)) r.emergency = *e;
  r.admission = read.boolean("admission", false);
  r.scheduled_duration_min = read.positive("scheduled_duration_min", "duration");
  r.general_anaesthesia = read.boolean("general_anaesthesia", false);

  std::size_t present = 0;
  for (auto key : kPositionFields) present += blank(raw, key) ? 0 : 1;
  if (present == kPositionCount) {
    PositionFlags flags{};
    bool any = false;
    bool parsed = true;
    for (std::size_t k = 0; k < kPositionCount; ++k) {
      auto v = read.boolean(kPositionFields[k], true);
      parsed = parsed && v.has_value();
      flags[k] = v.value_or(false);
      any = any || flags[k];
    }
    if (parsed && !any) read.fail("pos_supine", "position block present but no position flagged");
    if (parsed && any) r.positions = flags;
  } else if (present != 0) {
    read.fail("pos_supine", "position flags must be all present or all missing");
  }

  if (auto s = read.sex("sex", true)) r.sex = *s;
  r.age_years = read.non_negative("age_years");
  r.bmi = read.positive("bmi");
  if (auto v = read.boolean("allergy", true)) r.allergy = *v;
  if (auto v = read.boolean("infection", true)) r.infection = *v;
  if (auto v = read.boolean("comorbidity", true)) r.comorbidity = *v;
  r.asa = read.asa("asa", 5);
  r.actual_duration_min = read.positive("actual_duration_min", "outcome duration");

  if (errors.empty()) out.record = std::move(r);
  return out;
}

const std::vector<std::string>& predictor_field_names() {
  static const std::vector<std::string> kNames = [] {
    std::vector<std::string> names = {"surgery_date", "admission", "scheduled_duration_min",
                                      "general_anaesthesia"};
    for (auto p : kPositionFields) names.emplace_back(p);
    for (const char* n : {"sex", "age_years", "bmi", "allergy", "infection", "comorbidity", "asa"}) {
      names.emplace_back(n);
    }
    return names;
  }();
  return kNames;
}

std::vector<std::string> PredictorInput::absent_fields() const {
  std::vector<std::string> out;
  if (!surgery_date) out.emplace_back("surgery_date");
  if (!admission) out.emplace_back("admission");
  if (!scheduled_duration_min) out.emplace_back("scheduled_duration_min");
  if (!general_anaesthesia) out.emplace_back("general_anaesthesia");
  for (std::size_t k = 0; k < kPositionCount; ++k) {
    if (!positions[k]) out.emplace_back(kPositionFields[k]);
  }
  if (!sex) out.emplace_back("sex");
  if (!age_years) out.emplace_back("age_years");
  if (!bmi) out.emplace_back("bmi");
  if (!allergy) out.emplace_back("allergy");
  if (!infection) out.emplace_back("infection");
  if (!comorbidity) out.emplace_back("comorbidity");
  if (!asa) out.emplace_back("asa");
  return out;
}

PredictorInput predictors_of(const CaseRecord& r) {
  PredictorInput p;
  p.site_id = r.site_id;
  p.surgery_date = r.surgery_date;
  p.admission = r.admission;
  p.scheduled_duration_min = r.scheduled_duration_min;
  p.general_anaesthesia = r.general_anaesthesia;
  if (r.positions) {
    for (std::size_t k = 0; k < kPositionCount; ++k) p.positions[k] = (*r.positions)[k];
  }
  p.sex = r.sex;
  p.age_years = r.age_years;
  p.bmi = r.bmi;
  p.allergy = r.allergy;
  p.infection = r.infection;
  p.comorbidity = r.comorbidity;
  p.asa = r.asa;
  return p;
}

PredictorParse parse_predictor_input(const RawRow& values) {
  PredictorParse out;
  const auto& names = predictor_field_names();
  for (const auto& [key, _] : values) {
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      out.errors.push_back({key, "unknown field"});
    }
  }
  FieldReader read(values, out.errors);
  auto& in = out.input;
  in.surgery_date = read.date("surgery_date", false);
  if (in.surgery_date && in.surgery_date->weekday() > 5) {
    read.fail("surgery_date", "weekend dates are outside the elective weekday cohort");
    in.surgery_date.reset();
  }
  in.admission = read.boolean("admission", false);
  in.scheduled_duration_min = read.positive("scheduled_duration_min", "duration");
  in.general_anaesthesia = read.boolean("general_anaesthesia", false);
  for (std::size_t k = 0; k < kPositionCount; ++k) {
    in.positions[k] = read.boolean(kPositionFields[k], false);
  }
  in.sex = read.sex("sex", false);
  in.age_years = read.non_negative("age_years");
  in.bmi = read.positive("bmi");
  in.allergy = read.boolean("allergy", false);
  in.infection = read.boolean("infection", false);
  in.comorbidity = read.boolean("comorbidity", false);
  in.asa = read.asa("asa", 4);
  return out;
}

// ---------------------------------------------------------------------------
// Encoding

std::string_view to_string(FieldKind kind) {
  switch (kind) {
    case FieldKind::continuous: return "continuous";
    case FieldKind::binary: return "binary";
    case FieldKind::categorical: return "categorical";
  }
  return "?";
}

namespace {

FieldKind field_kind_from(std::string_view s) {
  if (s == "continuous") return FieldKind::continuous;
  if (s == "binary") return FieldKind::binary;
  if (s == "categorical") return FieldKind::categorical;
  throw DataError(fmt::format("unknown field kind '{}'", s));
}

class MetaBuilder {
 public:
  void categorical(const std::string& name, std::vector<int> levels) {
    FieldInfo f{name, FieldKind::categorical, std::move(levels), {}};
    for (std::size_t k = 1; k < f.levels.size(); ++k) {
      f.columns.push_back(meta_.features.size());
      meta_.features.push_back({fmt::format("{}_{}", name, f.levels[k]), name,
                                std::to_string(f.levels[k]), std::to_string(f.levels[0])});
    }
    meta_.fields.push_back(std::move(f));
  }

  void single(const std::string& name, FieldKind kind, std::string column = {},
              std::string level = {}, std::string reference = {}) {
    FieldInfo f{name, kind, {}, {meta_.features.size()}};
    meta_.features.push_back({column.empty() ? name : column, name, level, reference});
    meta_.fields.push_back(std::move(f));
  }

  EncodingMeta take() { return std::move(meta_); }
  EncodingMeta& meta() { return meta_; }

 private:
  EncodingMeta meta_;
};

}  // namespace

EncodingMeta make_encoding_meta(std::vector<int> year_levels) {
  std::sort(year_levels.begin(), year_levels.end());
  year_levels.erase(std::unique(year_levels.begin(), year_levels.end()), year_levels.end());
  if (year_levels.empty()) throw DataError("encoding requires at least one year level");

  MetaBuilder b;
  b.meta().year_levels = year_levels;
  b.categorical("year", year_levels);
  b.categorical("month", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  b.categorical("weekday", {1, 2, 3, 4, 5});
  b.single("admission", FieldKind::binary);
  b.single("scheduled_duration_min", FieldKind::continuous);
  b.single("general_anaesthesia", FieldKind::binary);
  for (auto p : kPositionFields) b.single(std::string(p), FieldKind::binary);
  b.single("sex", FieldKind::binary, "sex_male", "male", "female");
  b.single("age_years", FieldKind::continuous);
  b.single("bmi", FieldKind::continuous);
  b.single("allergy", FieldKind::binary);
  b.single("infection", FieldKind::binary);
  b.single("comorbidity", FieldKind::binary);
  b.categorical("asa", {1, 2, 3, 4});
  return b.take();
}

const FieldInfo& EncodingMeta::field(std::string_view name) const {
  auto idx = field_index(name);
  if (!idx) throw DataError(fmt::format("unknown field '{}'", name));
  return fields[*idx];
}

std::optional<std::size_t> EncodingMeta::field_index(std::string_view name) const {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i].name == name) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> EncodingMeta::column(std::string_view feature_name) const {
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].name == feature_name) return i;
  }
  return std::nullopt;
}

std::vector<std::string> EncodingMeta::column_names() const {
  std::vector<std::string> names;
  names.reserve(features.size());
  for (const auto& f : features) names.push_back(f.name);
  return names;
}

std::uint64_t EncodingMeta::fingerprint() const {
  std::uint64_t h = fnv1a64("durastack-encoding");
  for (const auto& f : features) {
    h = fnv1a64(f.name, h);
    h = fnv1a64("\x1f", h);
  }
  return h;
}

nlohmann::json EncodingMeta::to_json() const {
  nlohmann::json j;
  j["year_levels"] = year_levels;
  auto& feats = j["features"] = nlohmann::json::array();
  for (const auto& f : features) {
    feats.push_back({{"name", f.name}, {"source", f.source}, {"level", f.level}, {"reference", f.reference}});
  }
  auto& flds = j["fields"] = nlohmann::json::array();
  for (const auto& f : fields) {
    flds.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"levels", f.levels}, {"columns", f.columns}});
  }
  return j;
}

EncodingMeta EncodingMeta::from_json(const nlohmann::json& j) {
  try {
    EncodingMeta m;
    m.year_levels = j.at("year_levels").get<std::vector<int>>();
    for (const auto& f : j.at("features")) {
      m.features.push_back({f.at("name").get<std::string>(), f.at("source").get<std::string>(),
                            f.at("level").get<std::string>(), f.at("reference").get<std::string>()});
    }
    for (const auto& f : j.at("fields")) {
      m.fields.push_back({f.at("name").get<std::string>(), field_kind_from(f.at("kind").get<std::string>()),
                          f.at("levels").get<std::vector<int>>(),
                          f.at("columns").get<std::vector<std::size_t>>()});
    }
    if (m != make_encoding_meta(m.year_levels)) {
      throw DataError("encoding metadata does not match the case schema");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(fmt::format("malformed encoding metadata: {}", e.what()));
  }
}

bool EncodedDataset::has_missing() const { return X.hasNaN(); }

EncodedDataset EncodedDataset::subset(std::span<const std::size_t> indices) const {
  EncodedDataset out;
  out.meta = meta;
  const auto n = static_cast<Eigen::Index>(indices.size());
  out.X.resize(n, X.cols());
  out.y.resize(n);
  out.missing_mask.resize(n, missing_mask.cols());
  out.rows.reserve(indices.size());
  out.clusters.reserve(indices.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(i)]);
    out.X.row(i) = X.row(src);
    out.y(i) = y(src);
    out.missing_mask.row(i) = missing_mask.row(src);
    out.rows.push_back(rows[static_cast<std::size_t>(src)]);
    out.clusters.push_back(clusters[static_cast<std::size_t>(src)]);
  }
  return out;
}

std::vector<ClusterKey> EncodedDataset::distinct_clusters() const {
  std::vector<ClusterKey> keys = clusters;
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

Eigen::RowVectorXd encode_predictors(const PredictorInput& in, const EncodingMeta& meta) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(meta.width()));
  auto put = [&](std::string_view field, std::optional<double> v) {
    const auto& f = meta.field(field);
    if (!v) {
      for (auto c : f.columns) row(static_cast<Eigen::Index>(c)) = kNaN;
    } else {
      encode_field(row, f, *v);
    }
  };
  auto opt = [](const auto& o) -> std::optional<double> {
    if (!o) return std::nullopt;
    return static_cast<double>(*o);
  };

  if (in.surgery_date) {
    const Date& d = *in.surgery_date;
    const auto& year = meta.field("year");
    if (std::find(year.levels.begin(), year.levels.end(), d.year) != year.levels.end()) {
      encode_field(row, year, d.year);
    }  // unseen year: all-zero reference pattern
    put("month", d.month);
    const int wd = d.weekday();
    if (wd > 5) {
      throw DataError(fmt::format("surgery_date {} falls on a weekend; only weekday cases are modelled", d.iso()));
    }
    put("weekday", wd);
  } else {
    put("year", std::nullopt);
    put("month", std::nullopt);
    put("weekday", std::nullopt);
  }
  put("admission", opt(in.admission));
  put("scheduled_duration_min", in.scheduled_duration_min);
  put("general_anaesthesia", opt(in.general_anaesthesia));
  for (std::size_t k = 0; k < kPositionCount; ++k) put(kPositionFields[k], opt(in.positions[k]));
  put("sex", in.sex ? std::optional<double>(*in.sex == Sex::male ? 1.0 : 0.0) : std::nullopt);
  put("age_years", in.age_years);
  put("bmi", in.bmi);
  put("allergy", opt(in.allergy));
  put("infection", opt(in.infection));
  put("comorbidity", opt(in.comorbidity));
  if (in.asa && (*in.asa < 1 || *in.asa > 4)) {
    throw DataError(fmt::format("asa class {} outside the modelled classes 1..4", *in.asa));
  }
  put("asa", opt(in.asa));
  return row;
}

EncodedDataset encode(std::span<const CaseRecord> cohort, const EncodingMeta* meta) {
  EncodedDataset out;
  if (meta) {
    if (*meta != make_encoding_meta(meta->year_levels)) {
      throw DataError("encoding metadata does not match the case schema");
    }
    out.meta = *meta;
  } else {
    std::vector<int> years;
    for (const auto& r : cohort) years.push_back(r.surgery_date.year);
    if (years.empty()) throw DataError("cannot derive an encoding from an empty cohort");
    out.meta = make_encoding_meta(std::move(years));
  }

  const auto n = static_cast<Eigen::Index>(cohort.size());
  const auto p = static_cast<Eigen::Index>(out.meta.width());
  out.X.resize(n, p);
  out.y.resize(n);
  out.rows.reserve(cohort.size());
  out.clusters.reserve(cohort.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = cohort[static_cast<std::size_t>(i)];
    if (!r.actual_duration_min) {
      throw DataError(fmt::format("case '{}' has no outcome; outcomes are never imputed", r.case_id));
    }
    out.X.row(i) = encode_predictors(predictors_of(r), out.meta);
    out.y(i) = std::log(*r.actual_duration_min);
    out.rows.push_back(r.case_id);
    out.clusters.push_back(cluster_of(r));
  }
  out.missing_mask = out.X.array().isNaN();
  return out;
}

double decode_field(const ConstRowRef& row, const FieldInfo& field) {
  if (field.kind != FieldKind::categorical) return row(static_cast<Eigen::Index>(field.columns.front()));
  for (std::size_t k = 0; k < field.columns.size(); ++k) {
    if (row(static_cast<Eigen::Index>(field.columns[k])) > 0.5) return field.levels[k + 1];
  }
  return field.levels.front();
}

void encode_field(RowRef row, const FieldInfo& field, double value) {
  if (field.kind != FieldKind::categorical) {
    row(static_cast<Eigen::Index>(field.columns.front())) = value;
    return;
  }
  const auto level = static_cast<int>(std::lround(value));
  auto it = std::find(field.levels.begin(), field.levels.end(), level);
  if (it == field.levels.end()) {
    throw DataError(fmt::format("level {} is not a level of '{}'", level, field.name));
  }
  const auto idx = static_cast<std::size_t>(it - field.levels.begin());
  for (std::size_t k = 0; k < field.columns.size(); ++k) {
    row(static_cast<Eigen::Index>(field.columns[k])) = (k + 1 == idx) ? 1.0 : 0.0;
  }
}

}  // namespace durastack
