#include "durastack/learners.hpp"

#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"
#include "durastack/parallel.hpp"

namespace durastack {

std::string_view to_string(LearnerKind kind) {
  switch (kind) {
    case LearnerKind::elastic_net: return "elastic_net";
    case LearnerKind::gam: return "gam";
    case LearnerKind::random_forest: return "random_forest";
    case LearnerKind::gbt: return "gbt";
  }
  return "unknown";
}

std::optional<LearnerKind> learner_kind_from(std::string_view name) {
  for (auto k : kLearnerKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

const std::vector<std::string>& learner_params(LearnerKind kind) {
  static const std::vector<std::string> en = {"lambda", "alpha"};
  static const std::vector<std::string> gam = {"lambda_s", "knots"};
  static const std::vector<std::string> rf = {"n_trees", "mtry", "min_node"};
  static const std::vector<std::string> gbt = {"n_rounds", "depth", "learning_rate", "subsample"};
  switch (kind) {
    case LearnerKind::elastic_net: return en;
    case LearnerKind::gam: return gam;
    case LearnerKind::random_forest: return rf;
    case LearnerKind::gbt: return gbt;
  }
  return en;
}

double LearnerSpec::at(std::string_view key) const {
  auto it = params.find(std::string(key));
  if (it == params.end()) throw UsageError(fmt::format("{}: missing hyperparameter '{}'", to_string(kind), key));
  return it->second;
}

std::string LearnerSpec::label() const {
  std::string out(to_string(kind));
  out += '(';
  bool first = true;
  for (const auto& name : learner_params(kind)) {
    auto it = params.find(name);
    if (it == params.end()) continue;
    if (!first) out += ", ";
    out += name + "=" + detail::format_double(it->second);
    first = false;
  }
  return out + ')';
}

nlohmann::json LearnerSpec::to_json() const {
  nlohmann::json p = nlohmann::json::object();
  for (const auto& [k, v] : params) p[k] = v;
  return {{"kind", to_string(kind)}, {"params", p}, {"seed", seed}};
}

LearnerSpec LearnerSpec::from_json(const nlohmann::json& j) {
  LearnerSpec s;
  auto kind = learner_kind_from(j.at("kind").get<std::string>());
  if (!kind) throw DataError(fmt::format("unknown learner kind '{}'", j.at("kind").get<std::string>()));
  s.kind = *kind;
  for (const auto& [k, v] : j.at("params").items()) s.params[k] = v.get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

namespace {

bool is_integer(double v) { return std::isfinite(v) && v == std::floor(v); }

void require(bool ok, const LearnerSpec& spec, std::string_view what) {
  if (!ok) throw UsageError(fmt::format("{}: {}", spec.label(), what));
}

}  // namespace

void check_spec(const LearnerSpec& spec) {
  const auto& names = learner_params(spec.kind);
  for (const auto& [k, v] : spec.params) {
    if (std::find(names.begin(), names.end(), k) == names.end()) {
      throw UsageError(fmt::format("{}: unknown hyperparameter '{}'", to_string(spec.kind), k));
    }
    if (!std::isfinite(v)) throw UsageError(fmt::format("{}: {} is not finite", to_string(spec.kind), k));
  }
  for (const auto& k : names) {
    if (!spec.params.contains(k)) {
      throw UsageError(fmt::format("{}: missing hyperparameter '{}'", to_string(spec.kind), k));
    }
  }
  switch (spec.kind) {
    case LearnerKind::elastic_net:
      require(spec.at("lambda") >= 0.0, spec, "lambda must be >= 0");
      require(spec.at("alpha") >= 0.0 && spec.at("alpha") <= 1.0, spec, "alpha must lie in [0, 1]");
      break;
    case LearnerKind::gam:
      require(spec.at("lambda_s") >= 0.0, spec, "lambda_s must be >= 0");
      require(is_integer(spec.at("knots")) && spec.at("knots") >= 4, spec, "knots must be an integer >= 4");
      break;
    case LearnerKind::random_forest:
      for (const char* k : {"n_trees", "mtry", "min_node"}) {
        require(is_integer(spec.at(k)) && spec.at(k) >= 1, spec, fmt::format("{} must be an integer >= 1", k));
      }
      break;
    case LearnerKind::gbt:
      require(is_integer(spec.at("n_rounds")) && spec.at("n_rounds") >= 1, spec, "n_rounds must be an integer >= 1");
      require(is_integer(spec.at("depth")) && spec.at("depth") >= 1, spec, "depth must be an integer >= 1");
      require(spec.at("learning_rate") > 0.0, spec, "learning_rate must be > 0");
      require(spec.at("subsample") > 0.0 && spec.at("subsample") <= 1.0, spec, "subsample must lie in (0, 1]");
      break;
  }
}

// ---------------------------------------------------------------------------
// Grids

namespace {

double resolve_value(LearnerKind kind, const std::string& param, const std::string& text, std::size_t width) {
  if (kind == LearnerKind::random_forest && param == "mtry") {
    const auto p = static_cast<double>(width);
    if (text == "p/3") return std::max(1.0, std::ceil(p / 3.0));
    if (text == "sqrt(p)") return std::max(1.0, std::ceil(std::sqrt(p)));
  }
  auto v = detail::parse_double(text);
  if (!v) throw UsageError(fmt::format("grid.{}.{}: '{}' is not a number", to_string(kind), param, text));
  return *v;
}

}  // namespace

std::vector<LearnerSpec> Grids::expand(LearnerKind kind, std::size_t width) const {
  auto it = axes.find(kind);
  if (it == axes.end() || it->second.empty()) {
    throw UsageError(fmt::format("no tuning grid for {}", to_string(kind)));
  }
  std::vector<LearnerSpec> out{LearnerSpec{kind, {}, 0}};
  for (const auto& axis : it->second) {
    if (axis.values.empty()) throw UsageError(fmt::format("grid.{}.{} is empty", to_string(kind), axis.param));
    std::vector<LearnerSpec> next;
    for (const auto& spec : out) {
      for (const auto& text : axis.values) {
        auto s = spec;
        s.params[axis.param] = resolve_value(kind, axis.param, text, width);
        next.push_back(std::move(s));
      }
    }
    out = std::move(next);
  }
  for (const auto& s : out) check_spec(s);
  return out;
}

nlohmann::json Grids::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [kind, list] : axes) {
    nlohmann::json k = nlohmann::json::object();
    for (const auto& a : list) k[a.param] = a.values;
    j[std::string(to_string(kind))] = k;
  }
  return j;
}

Grids default_grids() {
  Grids g;
  g.axes[LearnerKind::elastic_net] = {{"lambda", {"0.0001", "0.001", "0.01", "0.1"}},
                                      {"alpha", {"0.1", "0.5", "0.9"}}};
  g.axes[LearnerKind::gam] = {{"lambda_s", {"0.01", "1", "100"}}, {"knots", {"10"}}};
  g.axes[LearnerKind::random_forest] = {
      {"n_trees", {"300"}}, {"mtry", {"p/3", "sqrt(p)"}}, {"min_node", {"5", "20"}}};
  g.axes[LearnerKind::gbt] = {{"n_rounds", {"100", "300"}},
                              {"depth", {"2", "4"}},
                              {"learning_rate", {"0.05", "0.1"}},
                              {"subsample", {"0.8"}}};
  return g;
}

// ---------------------------------------------------------------------------
// Fit / predict

FittedLearner fit_learner(const LearnerSpec& spec, const TrainingView& data) {
  check_spec(spec);
  if (data.X.cols() != static_cast<Eigen::Index>(data.meta.width())) {
    throw DataError("design width does not match its encoding");
  }
  if (!data.X.allFinite()) throw DataError(fmt::format("{}: design has missing cells", spec.label()));
  FittedLearner f;
  f.spec = spec;
  f.fingerprint = data.meta.fingerprint();
  f.width = data.meta.width();
  const auto as_size = [&](std::string_view k) { return static_cast<std::size_t>(spec.at(k)); };
  switch (spec.kind) {
    case LearnerKind::elastic_net:
      f.model = fit_elastic_net(data.X, data.y, spec.at("lambda"), spec.at("alpha"));
      break;
    case LearnerKind::gam:
      f.model = fit_gam(data, spec.at("lambda_s"), as_size("knots"));
      break;
    case LearnerKind::random_forest:
      f.model = fit_random_forest(data.X, data.y, as_size("n_trees"), as_size("mtry"), as_size("min_node"),
                                  spec.seed);
      break;
    case LearnerKind::gbt:
      f.model = fit_gbt(data.X, data.y, as_size("n_rounds"), as_size("depth"), spec.at("learning_rate"),
                        spec.at("subsample"), spec.seed);
      break;
  }
  return f;
}

FittedLearner fit_learner(const LearnerSpec& spec, const EncodedDataset& data) {
  return fit_learner(spec, TrainingView{data.X, data.y, data.meta});
}

double FittedLearner::predict_row(const ConstRowRef& x) const {
  struct Visitor {
    const ConstRowRef& x;
    double operator()(const ElasticNetModel& m) const {
      double v = m.intercept;
      for (Eigen::Index j = 0; j < m.beta.size(); ++j) v += m.beta(j) * x(j);
      return v;
    }
    double operator()(const GamModel& m) const {
      double v = m.intercept;
      for (std::size_t k = 0; k < m.linear_columns.size(); ++k) {
        v += m.linear_coef(static_cast<Eigen::Index>(k)) * x(static_cast<Eigen::Index>(m.linear_columns[k]));
      }
      for (const auto& s : m.smooths) v += s.eval(x(static_cast<Eigen::Index>(s.column)));
      return v;
    }
    double operator()(const TreeEnsemble& m) const { return m.predict(x); }
  };
  return std::visit(Visitor{x}, model);
}

Eigen::VectorXd FittedLearner::predict(const Eigen::MatrixXd& X, std::uint64_t fp) const {
  if (fp != fingerprint) {
    throw DataError(fmt::format("{}: encoding fingerprint {:016x} does not match training fingerprint {:016x}",
                                spec.label(), fp, fingerprint));
  }
  if (X.cols() != static_cast<Eigen::Index>(width)) {
    throw DataError(fmt::format("{}: expected {} columns, got {}", spec.label(), width, X.cols()));
  }
  if (!X.allFinite()) throw DataError(fmt::format("{}: cannot predict rows with missing cells", spec.label()));
  Eigen::VectorXd out(X.rows());
  constexpr std::size_t kBlock = 256;
  const auto rows = static_cast<std::size_t>(X.rows());
  parallel_for((rows + kBlock - 1) / kBlock, [&](std::size_t b) {
    const auto end = std::min(rows, (b + 1) * kBlock);
    for (auto i = b * kBlock; i < end; ++i) {
      out(static_cast<Eigen::Index>(i)) = predict_row(X.row(static_cast<Eigen::Index>(i)));
    }
  });
  return out;
}

Eigen::VectorXd FittedLearner::predict(const EncodedDataset& data) const {
  return predict(data.X, data.meta.fingerprint());
}

}  // namespace durastack
