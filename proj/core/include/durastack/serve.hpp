#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "durastack/config.hpp"
#include "durastack/stack.hpp"

namespace durastack {

inline constexpr std::string_view kSchemaVersion = "1";
inline constexpr std::string_view kDisclaimer =
    "Research use only. Predictions are not validated for clinical decision making.";

struct HttpResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
  std::map<std::string, std::string> headers;
};

/// Request handlers over an immutable, shared model. Handlers are pure
/// functions of the request and the loaded model.
class PredictionService {
 public:
  PredictionService() = default;
  explicit PredictionService(std::shared_ptr<const LockedModel> model) { set_model(std::move(model)); }

  void set_model(std::shared_ptr<const LockedModel> model);
  std::shared_ptr<const LockedModel> model() const;
  bool ready() const { return model() != nullptr; }

  /// fallback_seed is used when the request carries no "seed".
  HttpResponse handle_predict(std::string_view body, std::uint64_t fallback_seed) const;
  HttpResponse handle_schema(std::optional<std::string_view> if_none_match = std::nullopt) const;
  HttpResponse handle_health() const;
  HttpResponse handle_model() const;

  /// The schema document alone (independent of any model).
  static const nlohmann::json& schema();

 private:
  mutable std::mutex mutex_;
  std::shared_ptr<const LockedModel> model_;
};

/// cpp-httplib front end. start() binds before returning, so a port in use
/// fails immediately with UsageError.
class HttpServer {
 public:
  HttpServer(const PredictionService& service, ServeConfig config);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  void start();
  void stop();
  /// Blocks until the server stops.
  void wait();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace durastack
