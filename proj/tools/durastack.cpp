// durastack command-line entry point.

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "durastack/config.hpp"
#include "durastack/csv.hpp"
#include "durastack/detail/files.hpp"
#include "durastack/errors.hpp"
#include "durastack/ingest.hpp"
#include "durastack/parallel.hpp"
#include "durastack/pipeline.hpp"
#include "durastack/random.hpp"
#include "durastack/serve.hpp"
#include "durastack/synthdata.hpp"

namespace fs = std::filesystem;
using namespace durastack;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool out_required = true) {
  app->add_option("--config", c.config, "key=value configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "base seed (overrides the config)");
  app->add_option("--threads", c.threads, "worker threads (0 = all cores; env DURASTACK_THREADS)");
  auto* out = app->add_option("--out", c.out, "output directory or file");
  if (out_required) out->required();
}

RunConfig run_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::from(KeyValues::load(c.config));
  if (c.seed) cfg.seed = *c.seed;
  const auto t = resolve_threads(c.threads);
  if (t > 0) cfg.threads = t;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) { detail::write_file_atomic(path, text); }

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream s;
  fn(s);
  return s.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
}

int cmd_synth(const Common& c) {
  GeneratorConfig g = c.config.empty() ? GeneratorConfig::defaults() : GeneratorConfig::from(KeyValues::load(c.config));
  if (c.seed) g.seed = *c.seed;
  ThreadLimit limit(resolve_threads(c.threads));
  const fs::path dir = c.out;
  ensure_dir(dir);
  auto cohort = generate(g);
  auto masked = mask(cohort.records, g.missingness, derive_seed(g.seed, "mask"));
  std::vector<CaseRecord> dev, test;
  for (const auto& r : masked.records) (r.surgery_date.year == g.test_year ? test : dev).push_back(r);
  write_text(dir / "complete.csv", render([&](std::ostream& o) { write_csv(o, cohort.records); }));
  write_text(dir / "cohort.csv", render([&](std::ostream& o) { write_csv(o, masked.records); }));
  write_text(dir / "development.csv", render([&](std::ostream& o) { write_csv(o, dev); }));
  write_text(dir / "test.csv", render([&](std::ostream& o) { write_csv(o, test); }));
  write_text(dir / "mask.csv", render([&](std::ostream& o) { masked.write_sidecar(o); }));
  nlohmann::json truth = cohort.truth.to_json();
  truth["config"] = g.to_json();
  write_text(dir / "truth.json", truth.dump(1) + "\n");
  fmt::print("synth: {} records ({} development, {} test), {} masked cells -> {}\n", masked.records.size(), dev.size(),
             test.size(), masked.masked.size(), dir.string());
  return kOk;
}

int cmd_ingest(const Common& c, const std::string& input) {
  std::ifstream in(input, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", input));
  auto parsed = parse_csv(in);
  const fs::path dir = c.out;
  ensure_dir(dir);
  write_text(dir / "row_errors.csv", render([&](std::ostream& o) {
               o << "line,case_id,field,reason\n";
               for (const auto& e : parsed.errors) {
                 for (const auto& f : e.errors) {
                   o << e.line << ',' << csv::escape(e.case_id) << ',' << csv::escape(f.field) << ','
                     << csv::escape(f.reason) << '\n';
                 }
               }
             }));
  auto sel = select_cohort(std::move(parsed.records));
  write_text(dir / "cohort.csv", render([&](std::ostream& o) { write_csv(o, sel.cohort); }));
  write_text(dir / "exclusions.csv", render([&](std::ostream& o) { sel.report.write_csv(o); }));
  write_text(dir / "exclusions.json", sel.report.to_json().dump(2) + "\n");
  fmt::print("ingest: {} rows rejected, {} cases in cohort -> {}\n", parsed.errors.size(), sel.cohort.size(),
             dir.string());
  return parsed.errors.empty() ? kOk : kData;
}

int cmd_develop(const Common& c, const std::string& train) {
  const auto cfg = run_config(c);
  ThreadLimit limit(cfg.threads);
  auto records = run_stage("ingest", [&] { return read_cases(train); });
  const auto start = std::chrono::steady_clock::now();
  auto result = develop(std::move(records), cfg);
  const auto written = run_stage("write", [&] { return write_develop_outputs(result, c.out); });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  fmt::print("develop: {} cases, {} clusters, m={} in {:.1f}s\n", result.y.size(), result.iecv_report.rows.size(), cfg.m,
             secs);
  for (std::size_t j = 0; j < result.weights.size(); ++j) {
    const auto& w = result.weights[j].w;
    fmt::print("  imputation {}: weights EN {:.4f} GAM {:.4f} RF {:.4f} GBT {:.4f}\n", j, w[0], w[1], w[2], w[3]);
  }
  for (const auto& p : written) fmt::print("  wrote {}\n", p.string());
  return kOk;
}

int cmd_validate(const Common& c, const std::string& model_path, const std::string& test) {
  const auto cfg = run_config(c);
  ThreadLimit limit(cfg.threads);
  const auto model = run_stage("load", [&] { return load_file(model_path); });
  auto records = run_stage("ingest", [&] { return read_cases(test); });
  auto result = validate(model, std::move(records), cfg);
  ensure_dir(c.out);
  const auto written = run_stage("write", [&] { return write_validate_outputs(result, c.out); });
  const auto& s = result.summary;
  fmt::print("validate: n={} rmse={:.4f} mae={:.4f} intercept={:.4f} [{:.4f}, {:.4f}] slope={:.4f} [{:.4f}, {:.4f}] "
             "adjusted R2={:.4f}\n",
             s.n, s.rmse.value, s.mae.value, s.cal_intercept.value, s.cal_intercept.ci_low, s.cal_intercept.ci_high,
             s.cal_slope.value, s.cal_slope.ci_low, s.cal_slope.ci_high, s.adjusted_r2);
  for (const auto& p : written) fmt::print("  wrote {}\n", p.string());
  return kOk;
}

int cmd_predict(const Common& c, const std::string& model_path, const std::string& input) {
  const auto cfg = run_config(c);
  ThreadLimit limit(cfg.threads);
  const auto model = run_stage("load", [&] { return load_file(model_path); });
  std::ifstream in(input, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open {}", input));
  const auto rows = run_stage("predict", [&] { return predict_csv(model, in, derive_seed(cfg.seed, "predict")); });
  write_text(c.out, render([&](std::ostream& o) { write_predictions(o, rows); }));
  std::size_t failed = 0;
  for (const auto& r : rows) failed += r.outcome.prediction ? 0 : 1;
  fmt::print("predict: {} rows, {} failed -> {}\n", rows.size(), failed, c.out);
  return failed == 0 ? kOk : kData;
}

int cmd_report(const Common& c, const std::string& train, const std::string& test) {
  auto dev = run_stage("ingest", [&] { return read_cases(train); });
  std::vector<CaseRecord> tst;
  if (!test.empty()) tst = run_stage("ingest", [&] { return read_cases(test); });
  auto dev_sel = select_cohort(std::move(dev));
  auto test_sel = select_cohort(std::move(tst));
  std::map<std::string, Split> labels;
  std::vector<CaseRecord> all;
  for (auto& r : dev_sel.cohort) {
    labels[r.case_id] = Split::development;
    all.push_back(std::move(r));
  }
  for (auto& r : test_sel.cohort) {
    labels[r.case_id] = Split::test;
    all.push_back(std::move(r));
  }
  const auto table = run_stage("describe", [&] { return describe_cohort(all, labels); });
  const fs::path dir = c.out;
  ensure_dir(dir);
  write_text(dir / "table1.csv", render([&](std::ostream& o) { table.write_csv(o); }));
  write_text(dir / "table1.json", table.to_json().dump(2) + "\n");
  write_text(dir / "exclusions_development.csv", render([&](std::ostream& o) { dev_sel.report.write_csv(o); }));
  if (!test.empty()) {
    write_text(dir / "exclusions_test.csv", render([&](std::ostream& o) { test_sel.report.write_csv(o); }));
  }
  fmt::print("report: {} cases described -> {}\n", all.size(), dir.string());
  return kOk;
}

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const Common& c, const std::string& model_path, const std::optional<int>& port,
              const std::optional<std::string>& address, const std::optional<std::string>& static_dir) {
  const auto cfg = run_config(c);
  auto sc = cfg.serve;
  if (port) sc.port = *port;
  if (address) sc.address = *address;
  if (static_dir) sc.static_dir = *static_dir;
  if (!fs::is_regular_file(model_path)) throw DataError(fmt::format("model artifact {} not found", model_path));
  ThreadLimit limit(cfg.threads);

  PredictionService service;
  HttpServer server(service, sc);
  server.start();
  fmt::print("serve: listening on http://{}:{} (loading model)\n", sc.address, server.port());
  std::fflush(stdout);
  try {
    auto model = std::make_shared<const LockedModel>(load_file(model_path));
    service.set_model(std::move(model));
  } catch (...) {
    server.stop();
    server.wait();
    throw;
  }
  fmt::print("serve: model ready ({} pipelines)\n", service.model()->pipelines.size());
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  server.wait();
  fmt::print("serve: stopped\n");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"durastack: surgical case duration prediction with imputation, IECV and stacking"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Common synth_c, ingest_c, develop_c, validate_c, predict_c, report_c, serve_c;
  std::string ingest_in, train, model_path, test, predict_in, report_train, report_test;
  std::optional<int> port;
  std::optional<std::string> address, static_dir;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multicentre cohort");
  add_common(synth, synth_c);

  auto* ingest = app.add_subcommand("ingest", "validate a case CSV and apply cohort selection");
  add_common(ingest, ingest_c);
  ingest->add_option("--in", ingest_in, "case CSV")->required()->check(CLI::ExistingFile);

  auto* dev = app.add_subcommand("develop", "impute, tune by IECV, stack and lock a model");
  add_common(dev, develop_c);
  dev->add_option("--train", train, "development case CSV")->required()->check(CLI::ExistingFile);

  auto* val = app.add_subcommand("validate", "apply a locked model to a temporal test cohort");
  add_common(val, validate_c);
  val->add_option("--model", model_path, "model artifact (.dsm)")->required();
  val->add_option("--test", test, "test case CSV")->required()->check(CLI::ExistingFile);

  auto* pred = app.add_subcommand("predict", "batch predictions from a locked model");
  add_common(pred, predict_c);
  pred->add_option("--model", model_path, "model artifact (.dsm)")->required();
  pred->add_option("--in", predict_in, "CSV of predictor columns")->required()->check(CLI::ExistingFile);

  auto* rep = app.add_subcommand("report", "baseline characteristics table");
  add_common(rep, report_c);
  rep->add_option("--train", report_train, "development case CSV")->required()->check(CLI::ExistingFile);
  rep->add_option("--test", report_test, "test case CSV")->check(CLI::ExistingFile);

  auto* srv = app.add_subcommand("serve", "HTTP prediction service");
  add_common(srv, serve_c, false);
  srv->add_option("--model", model_path, "model artifact (.dsm)")->required();
  srv->add_option("--port", port, "TCP port");
  srv->add_option("--address", address, "bind address");
  srv->add_option("--static", static_dir, "directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(synth_c);
    if (*ingest) return cmd_ingest(ingest_c, ingest_in);
    if (*dev) return cmd_develop(develop_c, train);
    if (*val) return cmd_validate(validate_c, model_path, test);
    if (*pred) return cmd_predict(predict_c, model_path, predict_in);
    if (*rep) return cmd_report(report_c, report_train, report_test);
    if (*srv) return cmd_serve(serve_c, model_path, port, address, static_dir);
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kNumeric;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 1;
  }
  return kUsage;
}
