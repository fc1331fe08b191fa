#include "durastack/synthdata.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "durastack/csv.hpp"
#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"
#include "durastack/ingest.hpp"
#include "durastack/parallel.hpp"
#include "durastack/random.hpp"

namespace durastack {

namespace {

constexpr double kIqrZ = 1.3489795003921634;  // width of the standard normal IQR

bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

Date day_of_year(int year, int offset) {
  using namespace std::chrono;
  const sys_days d = sys_days{std::chrono::year{year} / January / 1} + days{offset};
  const year_month_day ymd{d};
  return {static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month())),
          static_cast<int>(static_cast<unsigned>(ymd.day()))};
}

int days_in_year(int year) { return std::chrono::year{year}.is_leap() ? 366 : 365; }

Date draw_date(Rng& rng, int year, bool weekend) {
  while (true) {
    const auto d = day_of_year(year, static_cast<int>(uniform_index(rng, static_cast<std::size_t>(days_in_year(year)))));
    if ((d.weekday() >= 6) == weekend) return d;
  }
}

/// Nearest weekday to a weekend date within the same year.
Date weekday_of(const Date& d) {
  using namespace std::chrono;
  const sys_days base{std::chrono::year{d.year} / d.month / d.day};
  for (int step : {-1, 1, -2, 2}) {
    const year_month_day ymd{base + days{step}};
    Date c{static_cast<int>(ymd.year()), static_cast<int>(static_cast<unsigned>(ymd.month())),
           static_cast<int>(static_cast<unsigned>(ymd.day()))};
    if (c.year == d.year && c.weekday() <= 5) return c;
  }
  return d;
}

double piecewise_quantile(const std::vector<std::pair<double, double>>& knots, double u) {
  for (std::size_t k = 1; k < knots.size(); ++k) {
    if (u <= knots[k].first) {
      const auto [p0, x0] = knots[k - 1];
      const auto [p1, x1] = knots[k];
      return x0 + (x1 - x0) * (u - p0) / (p1 - p0);
    }
  }
  return knots.back().second;
}

template <std::size_t N>
std::size_t draw_category(Rng& rng, const std::array<double, N>& p) {
  double total = 0.0;
  for (double v : p) total += v;
  double u = uniform01(rng) * total;
  for (std::size_t k = 0; k < N; ++k) {
    if (u < p[k]) return k;
    u -= p[k];
  }
  return N - 1;
}

struct Marginals {
  double bmi_c = 0.0, bmi_mu = 0.0, bmi_sigma = 0.0;
  double sched_mu = 0.0, sched_sigma = 0.0;
};

Marginals marginals_of(const GeneratorConfig& c) {
  Marginals m;
  const auto [q1, med, q3] = c.bmi_quartiles;
  const double denom = q1 + q3 - 2.0 * med;
  if (std::abs(denom) < 1e-12) {
    throw UsageError("bmi quartiles are symmetric; a shifted log-normal needs skew");
  }
  m.bmi_c = (q1 * q3 - med * med) / denom;
  const double lo = std::abs(m.bmi_c - q3), hi = std::abs(m.bmi_c - q1);
  m.bmi_mu = std::log(std::abs(m.bmi_c - med));
  m.bmi_sigma = std::abs(std::log(hi / lo)) / kIqrZ;
  const auto [s1, smed, s3] = c.scheduled_quartiles;
  m.sched_mu = std::log(smed);
  m.sched_sigma = std::log(s3 / s1) / kIqrZ;
  return m;
}

double linear_predictor(const GeneratorConfig& c, const EncodingMeta& meta, const std::vector<double>& beta,
                        const CaseRecord& record) {
  CaseRecord r = record;
  if (r.asa && *r.asa > 4) r.asa = 4;
  if (r.surgery_date.weekday() > 5) r.surgery_date = weekday_of(r.surgery_date);
  const Eigen::RowVectorXd x = encode_predictors(predictors_of(r), meta);
  double v = c.intercept;
  for (Eigen::Index j = 0; j < x.size(); ++j) v += beta[static_cast<std::size_t>(j)] * x(j);
  auto it = c.cluster_shift.find(cell_key(cluster_of(record)));
  if (it != c.cluster_shift.end()) v += it->second;
  return v;
}

void check_rate(std::string_view name, double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw UsageError(fmt::format("{} must lie in [0, 1] (got {})", name, v));
}

}  // namespace

std::string cell_key(const ClusterKey& cluster) { return fmt::format("{}-{}", cluster.site_id, cluster.year); }

std::string_view to_string(MissingMechanism m) { return m == MissingMechanism::mcar ? "mcar" : "mar_site"; }

double MissingnessRule::rate_for(const std::string& site) const {
  double r = rate;
  if (mechanism == MissingMechanism::mar_site) {
    auto it = site_factor.find(site);
    if (it != site_factor.end()) r *= it->second;
  }
  return std::clamp(r, 0.0, 1.0);
}

const std::vector<std::string>& maskable_fields() {
  static const std::vector<std::string> names{"admission", "scheduled_duration_min", "general_anaesthesia",
                                              "positions", "age_years",  "bmi", "asa"};
  return names;
}

std::vector<MissingnessRule> default_missingness() {
  return {{{"general_anaesthesia", "positions", "asa"}, MissingMechanism::mar_site, 0.64, {{"S1", 1.1}, {"S2", 0.85}}},
          {{"scheduled_duration_min"}, MissingMechanism::mcar, 0.32, {}},
          {{"bmi"}, MissingMechanism::mcar, 0.024, {}}};
}

std::map<std::string, double> default_beta() {
  return {{"month_8", -0.03},
          {"month_12", 0.02},
          {"weekday_5", -0.05},
          {"admission", 0.45},
          {"scheduled_duration_min", 0.0035},
          {"general_anaesthesia", 0.6},
          {"pos_prone", 0.35},
          {"pos_sitting", 0.3},
          {"pos_lithotomy", 0.15},
          {"pos_lateral", 0.3},
          {"pos_other", 0.1},
          {"sex_male", 0.05},
          {"age_years", 0.004},
          {"bmi", 0.012},
          {"allergy", 0.03},
          {"infection", 0.15},
          {"comorbidity", 0.1},
          {"asa_2", 0.08},
          {"asa_3", 0.18},
          {"asa_4", 0.3}};
}

GeneratorConfig GeneratorConfig::defaults(std::size_t n_development_cell, std::size_t n_test_cell) {
  GeneratorConfig c;
  for (const auto& [site, first] : {std::pair<std::string, int>{"S1", 2021}, {"S2", 2022}}) {
    for (int y = first; y <= 2024; ++y) {
      c.cells.push_back({{site, y}, y == c.test_year ? n_test_cell : n_development_cell});
    }
  }
  c.beta = default_beta();
  c.cluster_shift = {{"S1-2021", 0.04}, {"S1-2022", -0.02}, {"S1-2023", 0.03}, {"S1-2024", 0.02},
                     {"S2-2022", -0.05}, {"S2-2023", -0.01}, {"S2-2024", -0.03}};
  c.missingness = default_missingness();
  return c;
}

EncodingMeta GeneratorConfig::encoding() const {
  std::vector<int> years;
  for (const auto& cell : cells) years.push_back(cell.cluster.year);
  return make_encoding_meta(years);
}

void GeneratorConfig::validate() const {
  if (cells.empty()) throw UsageError("generator needs at least one (site, year) cell");
  std::set<ClusterKey> seen;
  for (const auto& cell : cells) {
    if (cell.cluster.site_id.empty()) throw UsageError("cell site must not be empty");
    if (cell.cluster.year < 1900 || cell.cluster.year > 2999) {
      throw UsageError(fmt::format("cell year {} out of range", cell.cluster.year));
    }
    if (!seen.insert(cell.cluster).second) throw UsageError(fmt::format("duplicate cell {}", cell_key(cell.cluster)));
  }
  for (const auto& [name, v] : std::initializer_list<std::pair<const char*, double>>{
           {"p_admission", p_admission}, {"p_general_anaesthesia", p_general_anaesthesia}, {"p_male", p_male},
           {"p_allergy", p_allergy}, {"p_infection", p_infection}, {"p_comorbidity", p_comorbidity},
           {"rate_emergency", rate_emergency}, {"rate_weekend", rate_weekend}, {"rate_asa5", rate_asa5},
           {"rate_missing_outcome", rate_missing_outcome}, {"rate_implausible_outcome", rate_implausible_outcome}}) {
    check_rate(name, v);
  }
  for (double p : p_position) check_rate("p_position", p);
  double asa_total = 0.0;
  for (double p : p_asa) {
    check_rate("p_asa", p);
    asa_total += p;
  }
  if (!(asa_total > 0.0)) throw UsageError("p_asa must have positive mass");
  if (age_quantiles.size() < 2 || age_quantiles.front().first != 0.0 || age_quantiles.back().first != 1.0) {
    throw UsageError("age quantile knots must span probabilities 0 to 1");
  }
  for (std::size_t k = 1; k < age_quantiles.size(); ++k) {
    if (!(age_quantiles[k].first > age_quantiles[k - 1].first) || age_quantiles[k].second < age_quantiles[k - 1].second) {
      throw UsageError("age quantile knots must increase");
    }
  }
  for (const auto& q : {bmi_quartiles, scheduled_quartiles}) {
    if (!(q[0] > 0.0 && q[0] < q[1] && q[1] < q[2])) throw UsageError("quartiles must satisfy 0 < Q1 < median < Q3");
  }
  if (!(residual_sd > 0.0) || !std::isfinite(residual_sd)) throw UsageError("residual sd must be > 0");
  const auto meta = encoding();
  for (const auto& [name, v] : beta) {
    if (!meta.column(name)) throw UsageError(fmt::format("beta names unknown feature '{}'", name));
    if (!std::isfinite(v)) throw UsageError(fmt::format("beta.{} is not finite", name));
  }
  for (const auto& [key, v] : cluster_shift) {
    if (std::none_of(cells.begin(), cells.end(), [&](const CellSpec& c) { return cell_key(c.cluster) == key; })) {
      throw UsageError(fmt::format("shift names unknown cell '{}'", key));
    }
    if (!std::isfinite(v)) throw UsageError(fmt::format("shift.{} is not finite", key));
  }
  for (const auto& rule : missingness) {
    if (rule.fields.empty()) throw UsageError("a missingness rule must name at least one field");
    for (const auto& f : rule.fields) {
      const auto& ok = maskable_fields();
      if (std::find(ok.begin(), ok.end(), f) == ok.end()) {
        throw UsageError(fmt::format("unknown or unmaskable field '{}' in missingness spec", f));
      }
    }
    check_rate("missingness rate", rule.rate);
    for (const auto& [site, factor] : rule.site_factor) {
      if (!(factor >= 0.0) || !std::isfinite(factor)) throw UsageError(fmt::format("site factor for {} must be >= 0", site));
    }
  }
  marginals_of(*this);
}

GeneratorConfig GeneratorConfig::from(const KeyValues& kv) {
  GeneratorConfig c = defaults(kv.unsigned_integer("n_development_cell", 4000), kv.unsigned_integer("n_test_cell", 3000));
  std::set<std::string> rule_names;
  kv.reject_unknown([&](const std::string& k) {
    static const std::set<std::string, std::less<>> plain{
        "seed", "n_development_cell", "n_test_cell", "cells", "test_year", "p_admission", "p_general_anaesthesia",
        "p_male", "p_allergy", "p_infection", "p_comorbidity", "p_asa", "p_position", "age_quantiles",
        "bmi_quartiles", "scheduled_quartiles", "rate_emergency", "rate_weekend", "rate_asa5",
        "rate_missing_outcome", "rate_implausible_outcome", "intercept", "residual_sd", "missing"};
    if (plain.count(k)) return true;
    if (k.rfind("beta.", 0) == 0 || k.rfind("shift.", 0) == 0) return true;
    if (k.rfind("missing.", 0) == 0) {
      const auto parts = detail::split(k, '.');
      if (parts.size() == 3 && (parts[2] == "fields" || parts[2] == "mechanism" || parts[2] == "rate")) {
        rule_names.insert(parts[1]);
        return true;
      }
      if (parts.size() == 4 && parts[2] == "factor") return true;
    }
    return false;
  });

  c.seed = kv.unsigned_integer("seed", c.seed);
  c.test_year = static_cast<int>(kv.integer("test_year", c.test_year));
  if (auto cells = kv.get("cells")) {
    c.cells.clear();
    for (const auto& item : detail::split(*cells, ',')) {
      const auto parts = detail::split(item, ':');
      auto year = parts.size() == 3 ? detail::parse_int<int>(parts[1]) : std::nullopt;
      auto n = parts.size() == 3 ? detail::parse_int<std::size_t>(parts[2]) : std::nullopt;
      if (!year || !n) throw UsageError(fmt::format("cells: expected site:year:n, got '{}'", item));
      c.cells.push_back({{parts[0], *year}, *n});
    }
    std::erase_if(c.cluster_shift, [&](const auto& kv_shift) {
      return std::none_of(c.cells.begin(), c.cells.end(),
                          [&](const CellSpec& cell) { return cell_key(cell.cluster) == kv_shift.first; });
    });
  }
  auto prob = [&](const char* key, double& v) { v = kv.number(key, v); };
  prob("p_admission", c.p_admission);
  prob("p_general_anaesthesia", c.p_general_anaesthesia);
  prob("p_male", c.p_male);
  prob("p_allergy", c.p_allergy);
  prob("p_infection", c.p_infection);
  prob("p_comorbidity", c.p_comorbidity);
  prob("rate_emergency", c.rate_emergency);
  prob("rate_weekend", c.rate_weekend);
  prob("rate_asa5", c.rate_asa5);
  prob("rate_missing_outcome", c.rate_missing_outcome);
  prob("rate_implausible_outcome", c.rate_implausible_outcome);
  prob("intercept", c.intercept);
  prob("residual_sd", c.residual_sd);
  auto fixed = [&](const char* key, auto& arr) {
    if (!kv.contains(key)) return;
    const auto v = kv.numbers(key);
    if (v.size() != arr.size()) throw UsageError(fmt::format("{} needs {} values", key, arr.size()));
    std::copy(v.begin(), v.end(), arr.begin());
  };
  fixed("p_asa", c.p_asa);
  fixed("p_position", c.p_position);
  fixed("bmi_quartiles", c.bmi_quartiles);
  fixed("scheduled_quartiles", c.scheduled_quartiles);
  if (kv.contains("age_quantiles")) {
    const auto v = kv.numbers("age_quantiles");
    if (v.size() < 4 || v.size() % 2 != 0) throw UsageError("age_quantiles needs p,age pairs");
    c.age_quantiles.clear();
    for (std::size_t k = 0; k < v.size(); k += 2) c.age_quantiles.emplace_back(v[k], v[k + 1]);
  }
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("beta.", 0) == 0) c.beta[key.substr(5)] = kv.number(key, 0.0);
    if (key.rfind("shift.", 0) == 0) c.cluster_shift[key.substr(6)] = kv.number(key, 0.0);
  }
  if (kv.contains("missing") || !rule_names.empty()) {
    c.missingness.clear();
    if (auto m = kv.get("missing"); m && *m != "none") throw UsageError("missing: only 'none' is accepted");
    for (const auto& name : rule_names) {
      MissingnessRule r;
      const auto prefix = "missing." + name + ".";
      auto fields = kv.get(prefix + "fields");
      if (!fields) throw UsageError(fmt::format("{}fields is required", prefix));
      r.fields = detail::split(*fields, ',');
      const auto mech = kv.get(prefix + "mechanism").value_or("mcar");
      if (mech == "mcar") {
        r.mechanism = MissingMechanism::mcar;
      } else if (mech == "mar_site") {
        r.mechanism = MissingMechanism::mar_site;
      } else {
        throw UsageError(fmt::format("{}mechanism must be mcar or mar_site", prefix));
      }
      r.rate = kv.number(prefix + "rate", 0.0);
      for (const auto& [key, value] : kv.entries()) {
        if (key.rfind(prefix + "factor.", 0) == 0) r.site_factor[key.substr(prefix.size() + 7)] = kv.number(key, 1.0);
      }
      c.missingness.push_back(std::move(r));
    }
  }
  c.validate();
  return c;
}

nlohmann::json GeneratorConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["test_year"] = test_year;
  auto& cj = j["cells"] = nlohmann::json::array();
  for (const auto& cell : cells) cj.push_back({{"cell", cell_key(cell.cluster)}, {"n", cell.n}});
  j["marginals"] = {{"p_admission", p_admission},
                    {"p_general_anaesthesia", p_general_anaesthesia},
                    {"p_position", p_position},
                    {"p_male", p_male},
                    {"p_allergy", p_allergy},
                    {"p_infection", p_infection},
                    {"p_comorbidity", p_comorbidity},
                    {"p_asa", p_asa},
                    {"age_quantiles", age_quantiles},
                    {"bmi_quartiles", bmi_quartiles},
                    {"scheduled_quartiles", scheduled_quartiles}};
  j["exclusions"] = {{"emergency", rate_emergency},
                     {"weekend", rate_weekend},
                     {"asa5", rate_asa5},
                     {"missing_outcome", rate_missing_outcome},
                     {"implausible_outcome", rate_implausible_outcome}};
  auto& mj = j["missingness"] = nlohmann::json::array();
  for (const auto& r : missingness) {
    mj.push_back({{"fields", r.fields}, {"mechanism", to_string(r.mechanism)}, {"rate", r.rate}, {"site_factor", r.site_factor}});
  }
  return j;
}

nlohmann::json GroundTruth::to_json() const {
  nlohmann::json j;
  j["intercept"] = intercept;
  j["beta"] = beta;
  j["cluster_shift"] = cluster_shift;
  j["residual_sd"] = residual_sd;
  auto& r = j["records"] = nlohmann::json::array();
  for (const auto& t : records) {
    r.push_back({{"case_id", t.case_id}, {"linear_predictor", t.linear_predictor}, {"log_duration", t.log_duration}});
  }
  return j;
}

GeneratedCohort generate(const GeneratorConfig& config) {
  config.validate();
  const auto meta = config.encoding();
  const auto mg = marginals_of(config);
  std::vector<double> beta(meta.width(), 0.0);
  for (const auto& [name, v] : config.beta) beta[*meta.column(name)] = v;

  std::vector<std::vector<CaseRecord>> records(config.cells.size());
  std::vector<std::vector<TruthRecord>> truth(config.cells.size());
  parallel_for(config.cells.size(), [&](std::size_t c) {
    const auto& cell = config.cells[c];
    Rng rng(derive_seed(config.seed, "cell", cell.cluster.hash()));
    const double pos_total = [&] {
      double s = 0.0;
      for (double p : config.p_position) s += p;
      return s;
    }();
    for (std::size_t i = 0; i < cell.n; ++i) {
      CaseRecord r;
      r.case_id = fmt::format("{}-{}-{:06d}", cell.cluster.site_id, cell.cluster.year, i + 1);
      r.site_id = cell.cluster.site_id;
      r.surgery_date = draw_date(rng, cell.cluster.year, bernoulli(rng, config.rate_weekend));
      r.emergency = bernoulli(rng, config.rate_emergency);
      r.admission = bernoulli(rng, config.p_admission);
      r.scheduled_duration_min =
          std::clamp(5.0 * std::round(std::exp(mg.sched_mu + mg.sched_sigma * standard_normal(rng)) / 5.0), 15.0, 720.0);
      r.general_anaesthesia = bernoulli(rng, config.p_general_anaesthesia);
      PositionFlags pos{};
      if (pos_total > 0.0) {
        const auto primary = draw_category(rng, config.p_position);
        for (std::size_t k = 0; k < kPositionCount; ++k) {
          const double q = config.p_position[k] / std::max(pos_total, 1.0);
          const double extra = q < 1.0 ? std::max(0.0, (config.p_position[k] - q) / (1.0 - q)) : 0.0;
          pos[k] = k == primary || bernoulli(rng, extra);
        }
      }
      r.positions = pos;
      r.sex = bernoulli(rng, config.p_male) ? Sex::male : Sex::female;
      r.age_years = std::round(piecewise_quantile(config.age_quantiles, uniform01(rng)));
      const double w = std::exp(mg.bmi_mu + mg.bmi_sigma * standard_normal(rng));
      const double bmi = config.bmi_quartiles[1] < mg.bmi_c ? mg.bmi_c - w : mg.bmi_c + w;
      r.bmi = std::clamp(std::round(bmi * 10.0) / 10.0, 13.0, 50.0);
      r.allergy = bernoulli(rng, config.p_allergy);
      r.infection = bernoulli(rng, config.p_infection);
      r.comorbidity = bernoulli(rng, config.p_comorbidity);
      r.asa = static_cast<int>(draw_category(rng, config.p_asa)) + 1;
      if (bernoulli(rng, config.rate_asa5)) r.asa = 5;

      TruthRecord t;
      t.case_id = r.case_id;
      t.linear_predictor = linear_predictor(config, meta, beta, r);
      t.log_duration = t.linear_predictor + config.residual_sd * standard_normal(rng);
      const double u = uniform01(rng);
      if (u < config.rate_missing_outcome) {
        r.actual_duration_min.reset();
      } else if (u < config.rate_missing_outcome + config.rate_implausible_outcome) {
        r.actual_duration_min = kMaxPlausibleMinutes + 60.0 + std::round(600.0 * uniform01(rng));
      } else {
        r.actual_duration_min = std::exp(t.log_duration);
      }
      records[c].push_back(std::move(r));
      truth[c].push_back(std::move(t));
    }
  });

  GeneratedCohort out;
  out.truth.intercept = config.intercept;
  out.truth.beta = config.beta;
  out.truth.cluster_shift = config.cluster_shift;
  out.truth.residual_sd = config.residual_sd;
  for (std::size_t c = 0; c < records.size(); ++c) {
    std::move(records[c].begin(), records[c].end(), std::back_inserter(out.records));
    std::move(truth[c].begin(), truth[c].end(), std::back_inserter(out.truth.records));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Masking

namespace {

std::vector<std::string> columns_of(const std::string& field) {
  if (field == "positions") return {kPositionFields.begin(), kPositionFields.end()};
  return {field};
}

void clear_field(CaseRecord& r, const std::string& field) {
  if (field == "admission") r.admission.reset();
  else if (field == "scheduled_duration_min") r.scheduled_duration_min.reset();
  else if (field == "general_anaesthesia") r.general_anaesthesia.reset();
  else if (field == "positions") r.positions.reset();
  else if (field == "age_years") r.age_years.reset();
  else if (field == "bmi") r.bmi.reset();
  else if (field == "asa") r.asa.reset();
}

std::size_t column_index(std::string_view column) {
  for (std::size_t k = 0; k < kCsvHeader.size(); ++k) {
    if (kCsvHeader[k] == column) return k;
  }
  throw DataError(fmt::format("unknown column '{}'", column));
}

}  // namespace

MaskResult mask(const std::vector<CaseRecord>& cohort, const std::vector<MissingnessRule>& rules, std::uint64_t seed) {
  for (const auto& rule : rules) {
    for (const auto& f : rule.fields) {
      const auto& ok = maskable_fields();
      if (std::find(ok.begin(), ok.end(), f) == ok.end()) {
        throw UsageError(fmt::format("unknown or unmaskable field '{}' in missingness spec", f));
      }
    }
    check_rate("missingness rate", rule.rate);
  }
  MaskResult out;
  out.records = cohort;
  for (std::size_t k = 0; k < rules.size(); ++k) {
    Rng rng(derive_seed(seed, "mask", k));
    for (auto& r : out.records) {
      if (!bernoulli(rng, rules[k].rate_for(r.site_id))) continue;
      const auto before = to_csv_fields(r);
      for (const auto& f : rules[k].fields) {
        for (const auto& col : columns_of(f)) {
          const auto& text = before[column_index(col)];
          if (!text.empty()) out.masked.push_back({r.case_id, col, text});
        }
        clear_field(r, f);
      }
    }
  }
  return out;
}

void MaskResult::write_sidecar(std::ostream& out) const {
  csv::write_row(out, {"case_id", "column", "value"});
  for (const auto& m : masked) csv::write_row(out, {m.case_id, m.column, m.value});
}

std::vector<MaskedCell> read_mask_sidecar(std::istream& in) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header || *header != std::vector<std::string>{"case_id", "column", "value"}) {
    throw DataError("mask sidecar must start with case_id,column,value");
  }
  std::vector<MaskedCell> out;
  while (auto row = reader.next()) {
    if (row->size() != 3) throw DataError(fmt::format("mask sidecar line {}: expected 3 fields", reader.line()));
    out.push_back({(*row)[0], (*row)[1], (*row)[2]});
  }
  return out;
}

std::vector<CaseRecord> unmask(const std::vector<CaseRecord>& masked, const std::vector<MaskedCell>& cells) {
  std::map<std::string, std::vector<const MaskedCell*>> by_case;
  for (const auto& c : cells) by_case[c.case_id].push_back(&c);
  std::vector<CaseRecord> out;
  out.reserve(masked.size());
  for (const auto& r : masked) {
    auto it = by_case.find(r.case_id);
    if (it == by_case.end()) {
      out.push_back(r);
      continue;
    }
    auto fields = to_csv_fields(r);
    for (const auto* c : it->second) fields[column_index(c->column)] = c->value;
    RawRow raw;
    for (std::size_t k = 0; k < kCsvHeader.size(); ++k) raw.emplace(std::string(kCsvHeader[k]), fields[k]);
    auto v = validate_record(raw);
    if (!v.ok()) throw DataError(fmt::format("case {}: sidecar values do not validate", r.case_id));
    out.push_back(std::move(*v.record));
  }
  return out;
}

}  // namespace durastack
