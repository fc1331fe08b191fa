#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include <doctest.h>

#include "durastack/metrics.hpp"
#include "durastack/pipeline.hpp"
#include "support/fixtures.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DURASTACK_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kRunConfig =
    "m = 2\niterations = 2\nbootstrap_b = 100\n"
    "grid.elastic_net.lambda = 0.001, 0.01\ngrid.elastic_net.alpha = 0.5\n"
    "grid.gam.lambda_s = 1\ngrid.gam.knots = 8\n"
    "grid.random_forest.n_trees = 15\ngrid.random_forest.mtry = p/3\ngrid.random_forest.min_node = 5\n"
    "grid.gbt.n_rounds = 20\ngrid.gbt.depth = 2\ngrid.gbt.learning_rate = 0.1\ngrid.gbt.subsample = 0.8\n";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage and data errors map to exit codes") {
  auto dir = fixtures::scratch("cli-errors");
  CHECK(run("") == 2);
  CHECK(run("--version-nope") == 2);
  CHECK(run("develop") == 2);
  CHECK(run("develop --train " + (dir / "absent.csv").string()) == 2);
  write(dir / "bad.cfg", "mm = 3\n");
  write(dir / "cases.csv", "case_id,site\nx,S1\n");
  CHECK(run("develop --train " + (dir / "cases.csv").string() + " --config " + (dir / "bad.cfg").string() +
            " --out " + dir.string()) == 2);
  CHECK(run("develop --train " + (dir / "cases.csv").string() + " --out " + dir.string()) == 3);
  CHECK(run("validate --model " + (dir / "none.dsm").string() + " --test " + (dir / "cases.csv").string() +
            " --out " + dir.string()) == 3);
  write(dir / "junk.dsm", "DSMODEL");
  CHECK(run("predict --model " + (dir / "junk.dsm").string() + " --in " + (dir / "cases.csv").string() +
            " --out " + (dir / "p.csv").string()) == 3);
}

TEST_CASE("synth, ingest, develop, validate, predict, report") {
  auto dir = fixtures::scratch("cli-flow");
  write(dir / "synth.cfg", "n_development_cell = 60\nn_test_cell = 60\nseed = 5\n");
  write(dir / "run.cfg", kRunConfig);
  REQUIRE(run("synth --config " + (dir / "synth.cfg").string() + " --out " + (dir / "data").string()) == 0);
  for (const char* f : {"complete.csv", "cohort.csv", "development.csv", "test.csv", "mask.csv", "truth.json"}) {
    CHECK_MESSAGE(fs::exists(dir / "data" / f), f);
  }
  CHECK(run("ingest --in " + (dir / "data" / "cohort.csv").string() + " --out " + (dir / "ingest").string()) == 0);
  CHECK(fs::exists(dir / "ingest" / "exclusions.csv"));

  const auto train = (dir / "data" / "development.csv").string();
  const auto test = (dir / "data" / "test.csv").string();
  REQUIRE(run("develop --train " + train + " --config " + (dir / "run.cfg").string() + " --out " + (dir / "dev").string()) == 0);
  REQUIRE(run("develop --train " + train + " --config " + (dir / "run.cfg").string() + " --out " + (dir / "dev2").string()) == 0);
  CHECK(slurp(dir / "dev" / "model.dsm") == slurp(dir / "dev2" / "model.dsm"));
  CHECK(first_line(dir / "dev" / "iecv_report.csv") == durastack::kReportCsvHeader);
  CHECK(line_count(dir / "dev" / "iecv_report.csv") == 7);
  CHECK(line_count(dir / "dev" / "iecv_report_fig4_deciles.csv") == 11);
  CHECK(fs::exists(dir / "dev" / "tune_audit.json"));

  const auto model = (dir / "dev" / "model.dsm").string();
  REQUIRE(run("validate --model " + model + " --test " + test + " --config " + (dir / "run.cfg").string() + " --out " +
              (dir / "val").string()) == 0);
  CHECK(first_line(dir / "val" / "temporal_report.csv") == durastack::kReportCsvHeader);
  CHECK(fs::exists(dir / "val" / "temporal_summary.json"));

  write(dir / "predict.csv", "case_id,bmi,age_years,asa\nq1,22.5,61,2\nq2,,70,\nq3,20,40,9\n");
  // one invalid row: output still written, exit code flags the data error
  CHECK(run("predict --model " + model + " --in " + (dir / "predict.csv").string() + " --out " +
            (dir / "predictions.csv").string()) == 3);
  CHECK(first_line(dir / "predictions.csv") == durastack::kPredictionCsvHeader);
  CHECK(line_count(dir / "predictions.csv") == 4);
  CHECK(slurp(dir / "predictions.csv").find("q3,,,,,") != std::string::npos);

  REQUIRE(run("report --train " + train + " --test " + test + " --out " + (dir / "report").string()) == 0);
  CHECK(fs::exists(dir / "report" / "table1.csv"));
}

}
