#include "durastack/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "durastack/csv.hpp"
#include "durastack/detail/files.hpp"
#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"
#include "durastack/random.hpp"

namespace durastack {

std::string build_timestamp() {
  std::int64_t secs = 0;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH"); env && *env) {
    auto v = detail::parse_int<std::int64_t>(env);
    if (!v) throw UsageError(fmt::format("SOURCE_DATE_EPOCH must be an integer (got '{}')", env));
    secs = *v;
  }
  using namespace std::chrono;
  const sys_seconds t{seconds{secs}};
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), hms.hours().count(),
                     hms.minutes().count(), hms.seconds().count());
}

namespace {

nlohmann::json cluster_counts(const EncodedDataset& data) {
  std::map<ClusterKey, std::size_t> n;
  for (const auto& c : data.clusters) ++n[c];
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [k, v] : n) out.push_back({{"cluster", k.label()}, {"n", v}});
  return out;
}

double mse(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) { return (y - yhat).squaredNorm() / static_cast<double>(y.size()); }

}  // namespace

DevelopResult develop(std::vector<CaseRecord> records, const RunConfig& config) {
  DevelopResult out;
  const std::size_t n_raw = records.size();
  auto selection = run_stage("select_cohort", [&] { return select_cohort(std::move(records), false); });
  out.exclusions = std::move(selection.report);
  if (selection.cohort.empty()) throw DataError("select_cohort: development cohort is empty after exclusions");
  const auto data = run_stage("encode", [&] { return encode(selection.cohort); });
  selection.cohort.clear();
  const auto folds = run_stage("folds", [&] { return make_folds(data); });
  out.y = data.y;
  out.clusters = data.clusters;

  const ImputerContext ctx{config.iterations, config.seed, config.use_outcome_validation};
  out.tuning = run_stage("tune", [&] { return tune_imputations(data, folds, config.grids, config.m, ctx); });

  out.oof_stacked.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(config.m));
  std::vector<std::array<LearnerSpec, 4>> specs;
  nlohmann::json audit_imputations = nlohmann::json::array();
  for (const auto& t : out.tuning) {
    auto w = run_stage("stack", [&] { return fit_stack_weights(t.oof, data.y); });
    const auto col = static_cast<Eigen::Index>(t.imputation);
    out.oof_stacked.col(col) = stacked(w, t.oof);
    specs.push_back(t.selected());
    nlohmann::json learners = nlohmann::json::array();
    nlohmann::json oof_mse = nlohmann::json::object();
    for (std::size_t k = 0; k < 4; ++k) {
      learners.push_back(t.tune[k].to_json());
      oof_mse[std::string(to_string(kLearnerKinds[k]))] = mse(data.y, t.oof.col(static_cast<Eigen::Index>(k)));
    }
    oof_mse["stack"] = mse(data.y, out.oof_stacked.col(col));
    audit_imputations.push_back({{"imputation", t.imputation},
                                 {"learners", learners},
                                 {"weights", w.w},
                                 {"oof_mse", oof_mse}});
    out.weights.push_back(w);
  }
  out.tune_audit = {{"seed", config.seed},
                    {"m", config.m},
                    {"iterations", config.iterations},
                    {"folds", folds.folds.size()},
                    {"grids", config.grids.to_json()},
                    {"imputations", audit_imputations}};

  const auto streams = run_stage("impute", [&] {
    return fit_imputer(data, config.m, config.iterations, derive_seed(config.seed, "develop-mice"));
  });
  Provenance prov;
  prov.seed = config.seed;
  prov.m = config.m;
  prov.iterations = config.iterations;
  prov.created = build_timestamp();
  prov.tool_version = std::string(kToolVersion);
  prov.grids = config.grids.to_json();
  prov.training = {{"n_raw", n_raw}, {"n_cohort", data.size()}, {"clusters", cluster_counts(data)},
                   {"exclusions", out.exclusions.to_json()}};
  prov.tune_digest = fnv1a64(out.tune_audit.dump());
  out.model = run_stage("lock", [&] {
    return lock(LockInput{data, streams, specs, out.weights, config.seed}, std::move(prov));
  });
  out.iecv_report = run_stage("report", [&] {
    return cluster_report(out.y, out.oof_stacked, out.clusters, ReportContext::iecv, config.bootstrap_b,
                          derive_seed(config.seed, "iecv-report"));
  });
  return out;
}

std::vector<std::filesystem::path> write_develop_outputs(const DevelopResult& result,
                                                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create output directory {}: {}", dir.string(), ec.message()));
  std::vector<std::filesystem::path> written;
  save_file(result.model, dir / "model.dsm");
  written.push_back(dir / "model.dsm");
  const Eigen::VectorXd mean_oof = result.oof_stacked.rowwise().mean();
  const auto plots = make_plot_data(result.y, mean_oof, derive_seed(result.model.provenance.seed, "iecv-plots"));
  for (auto& p : emit_report(result.iecv_report, &plots, dir, "iecv_report")) written.push_back(std::move(p));
  detail::write_file_atomic(dir / "tune_audit.json", result.tune_audit.dump(2) + "\n");
  written.push_back(dir / "tune_audit.json");
  std::ostringstream ex;
  result.exclusions.write_csv(ex);
  detail::write_file_atomic(dir / "exclusions.csv", ex.str());
  written.push_back(dir / "exclusions.csv");
  return written;
}

ValidateResult validate(const LockedModel& model, std::vector<CaseRecord> records, const RunConfig& config) {
  ValidateResult out;
  auto selection = run_stage("select_cohort", [&] { return select_cohort(std::move(records), false); });
  out.exclusions = std::move(selection.report);
  if (selection.cohort.empty()) throw DataError("select_cohort: test cohort is empty after exclusions");
  const auto data = run_stage("encode", [&] { return encode(selection.cohort, &model.meta); });
  out.y = data.y;
  out.clusters = data.clusters;
  out.log_pred = run_stage("predict", [&] {
    return predict_pipelines(model, data, config.use_outcome_validation, derive_seed(config.seed, "validate"));
  });
  run_stage("report", [&] {
    out.report = cluster_report(out.y, out.log_pred, out.clusters, ReportContext::temporal_test, config.bootstrap_b,
                                derive_seed(config.seed, "temporal-report"));
    out.summary = cohort_summary(out.y, out.log_pred, config.bootstrap_b, derive_seed(config.seed, "temporal-summary"));
    const Eigen::VectorXd mean = out.log_pred.rowwise().mean();
    out.plots = make_plot_data(out.y, mean, derive_seed(config.seed, "temporal-plots"));
  });
  return out;
}

std::vector<std::filesystem::path> write_validate_outputs(const ValidateResult& result,
                                                          const std::filesystem::path& dir) {
  auto written = emit_report(result.report, &result.plots, dir, "temporal_report");
  nlohmann::json summary = result.summary.to_json();
  summary["exclusions"] = result.exclusions.to_json();
  detail::write_file_atomic(dir / "temporal_summary.json", summary.dump(2) + "\n");
  written.push_back(dir / "temporal_summary.json");
  return written;
}

std::vector<PredictionRow> predict_csv(const LockedModel& model, std::istream& in, std::uint64_t seed) {
  csv::Reader reader(in);
  auto header = reader.next();
  if (!header) throw DataError("prediction input is empty");
  if (!header->empty() && (*header)[0].rfind("\xEF\xBB\xBF", 0) == 0) (*header)[0].erase(0, 3);
  const auto& names = predictor_field_names();
  static const std::set<std::string> passthrough{"case_id", "site", "emergency", "actual_duration_min"};
  std::set<std::string> seen;
  for (const auto& h : *header) {
    if (!passthrough.count(h) && std::find(names.begin(), names.end(), h) == names.end()) {
      throw DataError(fmt::format("prediction input has unknown column '{}'", h));
    }
    if (!seen.insert(h).second) throw DataError(fmt::format("prediction input repeats column '{}'", h));
  }

  std::vector<PredictionRow> rows;
  std::vector<PredictorInput> inputs;
  std::vector<std::size_t> slot;
  while (auto fields = reader.next()) {
    if (fields->size() != header->size()) {
      throw DataError(fmt::format("line {}: expected {} fields, got {}", reader.line(), header->size(), fields->size()));
    }
    PredictionRow row;
    RawRow raw;
    std::optional<std::string> site;
    for (std::size_t k = 0; k < header->size(); ++k) {
      const auto& h = (*header)[k];
      const auto v = std::string(detail::trim((*fields)[k]));
      if (h == "case_id") row.case_id = v;
      else if (h == "site") site = v.empty() ? std::nullopt : std::optional<std::string>(v);
      else if (!passthrough.count(h) && !v.empty()) raw.emplace(h, v);
    }
    if (row.case_id.empty()) row.case_id = std::to_string(rows.size() + 1);
    auto parsed = parse_predictor_input(raw);
    if (!parsed.errors.empty()) {
      std::vector<std::string> msgs;
      for (const auto& e : parsed.errors) msgs.push_back(fmt::format("{}: {}", e.field, e.reason));
      row.outcome.error = fmt::format("{}", fmt::join(msgs, "; "));
    } else {
      parsed.input.site_id = site;
      slot.push_back(rows.size());
      inputs.push_back(std::move(parsed.input));
    }
    rows.push_back(std::move(row));
  }
  auto outcomes = predict_locked(model, inputs, seed);
  for (std::size_t k = 0; k < outcomes.size(); ++k) rows[slot[k]].outcome = std::move(outcomes[k]);
  return rows;
}

void write_predictions(std::ostream& out, const std::vector<PredictionRow>& rows) {
  out << kPredictionCsvHeader << '\n';
  for (const auto& r : rows) {
    if (const auto& p = r.outcome.prediction) {
      csv::write_row(out, {r.case_id, detail::format_double(p->predicted_minutes), detail::format_double(p->log_pred_mean),
                           detail::format_double(p->pipeline_spread), fmt::format("{}", fmt::join(p->imputed_fields, ";")),
                           ""});
    } else {
      csv::write_row(out, {r.case_id, "", "", "", "", r.outcome.error});
    }
  }
}

std::vector<CaseRecord> read_cases(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", path.string()));
  auto parsed = parse_csv(in);
  if (!parsed.errors.empty()) {
    const auto& e = parsed.errors.front();
    std::vector<std::string> msgs;
    for (const auto& f : e.errors) msgs.push_back(fmt::format("{}: {}", f.field, f.reason));
    throw DataError(fmt::format("{}: {} invalid row(s); first at line {} ({})", path.string(), parsed.errors.size(),
                                e.line, fmt::join(msgs, "; ")));
  }
  return std::move(parsed.records);
}

}  // namespace durastack
