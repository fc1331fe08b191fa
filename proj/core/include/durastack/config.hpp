#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "durastack/learners.hpp"

namespace durastack {

/// Flat key=value text. '#' starts a comment; blank lines are ignored.
/// Duplicate keys are an error.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, std::string_view origin = "config");
  static KeyValues load(const std::filesystem::path& path);

  bool contains(std::string_view key) const { return values_.find(key) != values_.end(); }
  std::optional<std::string> get(std::string_view key) const;
  const std::map<std::string, std::string, std::less<>>& entries() const { return values_; }

  double number(std::string_view key, double fallback) const;
  std::int64_t integer(std::string_view key, std::int64_t fallback) const;
  std::uint64_t unsigned_integer(std::string_view key, std::uint64_t fallback) const;
  bool boolean(std::string_view key, bool fallback) const;
  std::vector<double> numbers(std::string_view key) const;

  /// Throws UsageError naming every key not accepted by `known`.
  template <typename Pred>
  void reject_unknown(Pred known) const {
    std::vector<std::string> bad;
    for (const auto& [k, v] : values_) {
      if (!known(k)) bad.push_back(k);
    }
    if (!bad.empty()) fail_unknown(bad);
  }

 private:
  [[noreturn]] void fail_unknown(const std::vector<std::string>& keys) const;
  [[noreturn]] void fail(std::string_view key, std::string_view why) const;

  std::string origin_;
  std::map<std::string, std::string, std::less<>> values_;
};

struct ServeConfig {
  std::string address = "127.0.0.1";
  int port = 8080;
  std::string static_dir;
  std::size_t workers = 8;
};

struct RunConfig {
  std::size_t m = 5;
  std::size_t iterations = 5;
  std::uint64_t seed = 20240101;
  std::size_t bootstrap_b = 1000;
  std::size_t threads = 0;
  bool use_outcome_validation = true;
  Grids grids = default_grids();
  ServeConfig serve;

  static RunConfig from(const KeyValues& kv);
  nlohmann::json to_json() const;
};

/// Thread count from an explicit value, else DURASTACK_THREADS, else 0 (all cores).
std::size_t resolve_threads(std::optional<std::size_t> explicit_threads);

}  // namespace durastack
