#include "durastack/config.hpp"

#include <cstdlib>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "durastack/detail/files.hpp"
#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"

namespace durastack {

KeyValues KeyValues::parse(std::string_view text, std::string_view origin) {
  KeyValues kv;
  kv.origin_ = std::string(origin);
  std::size_t line_no = 0;
  for (const auto& raw : detail::split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw UsageError(fmt::format("{}:{}: expected key=value", origin, line_no));
    }
    const auto key = std::string(detail::trim(line.substr(0, eq)));
    const auto value = std::string(detail::trim(line.substr(eq + 1)));
    if (key.empty()) throw UsageError(fmt::format("{}:{}: empty key", origin, line_no));
    if (!kv.values_.emplace(key, value).second) {
      throw UsageError(fmt::format("{}:{}: duplicate key '{}'", origin, line_no, key));
    }
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error& e) {
    throw UsageError(fmt::format("cannot read config: {}", e.what()));
  }
  return parse(text, path.string());
}

std::optional<std::string> KeyValues::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

double KeyValues::number(std::string_view key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto d = detail::parse_double(*v);
  if (!d) fail(key, "expected a number");
  return *d;
}

std::int64_t KeyValues::integer(std::string_view key, std::int64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto i = detail::parse_int<std::int64_t>(*v);
  if (!i) fail(key, "expected an integer");
  return *i;
}

std::uint64_t KeyValues::unsigned_integer(std::string_view key, std::uint64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto i = detail::parse_int<std::uint64_t>(*v);
  if (!i) fail(key, "expected a non-negative integer");
  return *i;
}

bool KeyValues::boolean(std::string_view key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  auto b = detail::parse_bool(*v, true);
  if (!b) fail(key, "expected a boolean");
  return *b;
}

std::vector<double> KeyValues::numbers(std::string_view key) const {
  std::vector<double> out;
  auto v = get(key);
  if (!v) return out;
  for (const auto& part : detail::split(*v, ',')) {
    auto d = detail::parse_double(part);
    if (!d) fail(key, fmt::format("'{}' is not a number", part));
    out.push_back(*d);
  }
  return out;
}

void KeyValues::fail_unknown(const std::vector<std::string>& keys) const {
  throw UsageError(fmt::format("{}: unknown key{} {}", origin_, keys.size() == 1 ? "" : "s", fmt::join(keys, ", ")));
}

void KeyValues::fail(std::string_view key, std::string_view why) const {
  throw UsageError(fmt::format("{}: {}: {} (got '{}')", origin_, key, why, get(key).value_or("")));
}

namespace {

bool is_grid_key(const std::string& key) {
  if (key.rfind("grid.", 0) != 0) return false;
  const auto rest = std::string_view(key).substr(5);
  const auto dot = rest.find('.');
  if (dot == std::string_view::npos) return false;
  auto kind = learner_kind_from(rest.substr(0, dot));
  if (!kind) return false;
  const auto param = rest.substr(dot + 1);
  for (const auto& p : learner_params(*kind)) {
    if (p == param) return true;
  }
  return false;
}

}  // namespace

RunConfig RunConfig::from(const KeyValues& kv) {
  static const std::set<std::string, std::less<>> plain{
      "m", "iterations", "seed", "bootstrap_b", "threads", "use_outcome_validation",
      "serve.address", "serve.port", "serve.static_dir", "serve.workers"};
  kv.reject_unknown([](const std::string& k) { return plain.count(k) > 0 || is_grid_key(k); });

  RunConfig c;
  auto positive = [&](std::string_view key, std::size_t fallback) {
    const auto v = kv.unsigned_integer(key, fallback);
    if (v == 0) throw UsageError(fmt::format("{} must be >= 1", key));
    return static_cast<std::size_t>(v);
  };
  c.m = positive("m", c.m);
  c.iterations = positive("iterations", c.iterations);
  c.seed = kv.unsigned_integer("seed", c.seed);
  c.bootstrap_b = positive("bootstrap_b", c.bootstrap_b);
  c.threads = static_cast<std::size_t>(kv.unsigned_integer("threads", c.threads));
  c.use_outcome_validation = kv.boolean("use_outcome_validation", c.use_outcome_validation);
  c.serve.address = kv.get("serve.address").value_or(c.serve.address);
  const auto port = kv.integer("serve.port", c.serve.port);
  if (port < 0 || port > 65535) throw UsageError(fmt::format("serve.port {} out of range", port));
  c.serve.port = static_cast<int>(port);
  c.serve.static_dir = kv.get("serve.static_dir").value_or(c.serve.static_dir);
  c.serve.workers = positive("serve.workers", c.serve.workers);

  for (const auto& [key, value] : kv.entries()) {
    if (!is_grid_key(key)) continue;
    const auto rest = std::string_view(key).substr(5);
    const auto dot = rest.find('.');
    const auto kind = *learner_kind_from(rest.substr(0, dot));
    const auto param = std::string(rest.substr(dot + 1));
    auto values = detail::split(value, ',');
    for (const auto& v : values) {
      const bool rule = kind == LearnerKind::random_forest && param == "mtry" && (v == "p/3" || v == "sqrt(p)");
      if (!rule && !detail::parse_double(v)) {
        throw UsageError(fmt::format("{}: '{}' is not a valid grid value", key, v));
      }
    }
    auto& axes = c.grids.axes[kind];
    bool found = false;
    for (auto& a : axes) {
      if (a.param == param) {
        a.values = values;
        found = true;
      }
    }
    if (!found) axes.push_back({param, values});
  }
  for (auto kind : kLearnerKinds) c.grids.expand(kind, 20);
  return c;
}

nlohmann::json RunConfig::to_json() const {
  return {{"m", m},
          {"iterations", iterations},
          {"seed", seed},
          {"bootstrap_b", bootstrap_b},
          {"use_outcome_validation", use_outcome_validation},
          {"grids", grids.to_json()}};
}

std::size_t resolve_threads(std::optional<std::size_t> explicit_threads) {
  if (explicit_threads) return *explicit_threads;
  if (const char* env = std::getenv("DURASTACK_THREADS"); env && *env) {
    auto v = detail::parse_int<std::size_t>(env);
    if (!v) throw UsageError(fmt::format("DURASTACK_THREADS must be a non-negative integer (got '{}')", env));
    return *v;
  }
  return 0;
}

}  // namespace durastack
