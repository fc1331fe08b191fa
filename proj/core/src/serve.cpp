#include "durastack/serve.hpp"

#include <random>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>

#include "durastack/detail/text.hpp"
#include "durastack/errors.hpp"
#include "durastack/random.hpp"

namespace durastack {

namespace {

enum class ValueType { date, boolean, number, integer, sex };

struct FieldSpec {
  std::string name;
  ValueType type;
  std::string label;
};

const std::vector<FieldSpec>& field_specs() {
  static const std::vector<FieldSpec> specs = [] {
    std::vector<FieldSpec> s{{"surgery_date", ValueType::date, "Date of surgery (weekday)"},
                             {"admission", ValueType::boolean, "Inpatient admission"},
                             {"scheduled_duration_min", ValueType::number, "Scheduled duration (min)"},
                             {"general_anaesthesia", ValueType::boolean, "General anaesthesia"}};
    const std::array<const char*, kPositionCount> labels{"Supine position", "Prone position", "Sitting position",
                                                         "Lithotomy position", "Lateral position", "Other position"};
    for (std::size_t k = 0; k < kPositionCount; ++k) s.push_back({std::string(kPositionFields[k]), ValueType::boolean, labels[k]});
    s.push_back({"sex", ValueType::sex, "Sex"});
    s.push_back({"age_years", ValueType::number, "Age (years)"});
    s.push_back({"bmi", ValueType::number, "Body mass index (kg/m2)"});
    s.push_back({"allergy", ValueType::boolean, "History of allergy"});
    s.push_back({"infection", ValueType::boolean, "Presence of infection"});
    s.push_back({"comorbidity", ValueType::boolean, "Comorbidity"});
    s.push_back({"asa", ValueType::integer, "ASA physical status"});
    return s;
  }();
  return specs;
}

nlohmann::json schema_entry(const FieldSpec& f) {
  nlohmann::json j{{"name", f.name}, {"label", f.label}, {"required", false}};
  switch (f.type) {
    case ValueType::date:
      j["type"] = "date";
      j["format"] = "YYYY-MM-DD";
      j["weekdays_only"] = true;
      break;
    case ValueType::boolean:
      j["type"] = "boolean";
      break;
    case ValueType::sex:
      j["type"] = "enum";
      j["enum"] = {"F", "M"};
      break;
    case ValueType::integer:
      j["type"] = "enum";
      j["enum"] = {1, 2, 3, 4};
      break;
    case ValueType::number:
      j["type"] = "number";
      if (f.name == "age_years") {
        j["minimum"] = 0;
        j["unit"] = "years";
      } else {
        j["exclusive_minimum"] = 0;
        j["unit"] = f.name == "bmi" ? "kg/m2" : "min";
      }
      break;
  }
  return j;
}

HttpResponse json_response(int status, const nlohmann::json& body) {
  HttpResponse r;
  r.status = status;
  r.body = body.dump();
  return r;
}

HttpResponse bad_request(std::vector<FieldError> errors) {
  nlohmann::json fields = nlohmann::json::array();
  for (const auto& e : errors) fields.push_back({{"field", e.field}, {"message", e.reason}});
  return json_response(400, {{"error", "invalid request"}, {"fields", fields}});
}

std::string number_text(double v) {
  if (std::floor(v) == v && std::abs(v) < 1e15) return fmt::format("{}", static_cast<long long>(v));
  return detail::format_double(v);
}

std::string model_version(const LockedModel& m) {
  return fmt::format("{}-{:016x}", m.provenance.tool_version, m.provenance.tune_digest);
}

}  // namespace

const nlohmann::json& PredictionService::schema() {
  static const nlohmann::json doc = [] {
    nlohmann::json fields = nlohmann::json::array();
    for (const auto& f : field_specs()) fields.push_back(schema_entry(f));
    return nlohmann::json{{"schema_version", kSchemaVersion},
                          {"fields", fields},
                          {"request", {{"seed", "optional unsigned integer; fixes the imputation draws"}}},
                          {"missing", "omit a field or send null to have it imputed"}};
  }();
  return doc;
}

void PredictionService::set_model(std::shared_ptr<const LockedModel> model) {
  std::lock_guard lock(mutex_);
  model_ = std::move(model);
}

std::shared_ptr<const LockedModel> PredictionService::model() const {
  std::lock_guard lock(mutex_);
  return model_;
}

HttpResponse PredictionService::handle_predict(std::string_view body, std::uint64_t fallback_seed) const {
  const auto model = this->model();
  if (!model) return json_response(503, {{"error", "model is loading"}});
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return json_response(400, {{"error", "request body is not valid JSON"}});
  }
  if (!req.is_object()) return json_response(400, {{"error", "request body must be a JSON object"}});

  std::vector<FieldError> errors;
  RawRow raw;
  std::uint64_t seed = fallback_seed;
  for (const auto& [key, value] : req.items()) {
    if (key == "seed") {
      if (value.is_number_unsigned()) {
        seed = value.get<std::uint64_t>();
      } else if (!value.is_null()) {
        errors.push_back({"seed", "expected an unsigned integer"});
      }
      continue;
    }
    auto spec = std::find_if(field_specs().begin(), field_specs().end(), [&](const FieldSpec& f) { return f.name == key; });
    if (spec == field_specs().end()) {
      errors.push_back({key, "unknown field"});
      continue;
    }
    if (value.is_null()) continue;
    switch (spec->type) {
      case ValueType::date:
      case ValueType::sex:
        if (!value.is_string()) {
          errors.push_back({key, "expected a string"});
        } else {
          raw.emplace(key, value.get<std::string>());
        }
        break;
      case ValueType::boolean:
        if (value.is_boolean()) {
          raw.emplace(key, value.get<bool>() ? "1" : "0");
        } else if (value.is_number_integer() && (value.get<long long>() == 0 || value.get<long long>() == 1)) {
          raw.emplace(key, std::to_string(value.get<long long>()));
        } else {
          errors.push_back({key, "expected true/false"});
        }
        break;
      case ValueType::number:
      case ValueType::integer:
        if (!value.is_number()) {
          errors.push_back({key, "expected a number"});
        } else {
          raw.emplace(key, number_text(value.get<double>()));
        }
        break;
    }
  }
  auto parsed = parse_predictor_input(raw);
  errors.insert(errors.end(), parsed.errors.begin(), parsed.errors.end());
  if (!errors.empty()) return bad_request(std::move(errors));

  LockedPrediction p;
  try {
    p = predict_one(*model, parsed.input, seed);
  } catch (const DataError& e) {
    return json_response(400, {{"error", e.what()}});
  } catch (const std::exception& e) {
    return json_response(500, {{"error", fmt::format("internal error: {}", e.what())}});
  }
  return json_response(200, {{"predicted_minutes", p.predicted_minutes},
                             {"log_prediction_mean", p.log_pred_mean},
                             {"per_pipeline_log", p.log_pred_per_pipeline},
                             {"pipeline_spread", p.pipeline_spread},
                             {"imputed_fields", p.imputed_fields},
                             {"seed", seed},
                             {"model_version", model_version(*model)},
                             {"schema_version", kSchemaVersion}});
}

HttpResponse PredictionService::handle_schema(std::optional<std::string_view> if_none_match) const {
  static const std::string body = schema().dump();
  static const std::string etag = fmt::format("\"{:016x}\"", fnv1a64(body));
  HttpResponse r;
  r.headers["ETag"] = etag;
  r.headers["Cache-Control"] = "public, max-age=3600";
  if (if_none_match && *if_none_match == etag) {
    r.status = 304;
    return r;
  }
  r.body = body;
  return r;
}

HttpResponse PredictionService::handle_health() const {
  const auto model = this->model();
  if (!model) return json_response(503, {{"status", "loading"}});
  return json_response(200, {{"status", "ok"}, {"pipelines", model->pipelines.size()}});
}

HttpResponse PredictionService::handle_model() const {
  const auto model = this->model();
  if (!model) return json_response(503, {{"error", "model is loading"}});
  const auto& p = model->provenance;
  nlohmann::json pipelines = nlohmann::json::array();
  for (const auto& pl : model->pipelines) {
    nlohmann::json learners = nlohmann::json::array();
    for (const auto& l : pl.learners) learners.push_back(l.spec.to_json());
    pipelines.push_back({{"weights", pl.weights.w}, {"learners", learners}});
  }
  return json_response(200, {{"model_version", model_version(*model)},
                             {"format_version", model->format_version},
                             {"schema_version", kSchemaVersion},
                             {"provenance",
                              {{"seed", p.seed},
                               {"m", p.m},
                               {"iterations", p.iterations},
                               {"created", p.created},
                               {"tool_version", p.tool_version},
                               {"training", p.training}}},
                             {"pipelines", pipelines},
                             {"pipeline_spread",
                              "range of the per-pipeline log predictions; an imputation-sensitivity indicator, "
                              "not a calibrated interval"},
                             {"disclaimer", kDisclaimer}});
}

// ---------------------------------------------------------------------------
// HTTP front end

struct HttpServer::Impl {
  const PredictionService& service;
  ServeConfig config;
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::random_device entropy;
  std::mutex entropy_mutex;

  Impl(const PredictionService& s, ServeConfig c) : service(s), config(std::move(c)) {}

  std::uint64_t request_seed() {
    std::lock_guard lock(entropy_mutex);
    return (static_cast<std::uint64_t>(entropy()) << 32) ^ entropy();
  }
};

namespace {

void send(httplib::Response& res, const HttpResponse& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  if (!r.body.empty() || r.status != 304) res.set_content(r.body, r.content_type);
}

}  // namespace

HttpServer::HttpServer(const PredictionService& service, ServeConfig config)
    : impl_(std::make_unique<Impl>(service, std::move(config))) {
  auto& s = impl_->server;
  auto* impl = impl_.get();
  const auto workers = impl_->config.workers;
  s.new_task_queue = [workers] { return new httplib::ThreadPool(workers); };
  s.Post("/api/v1/predict", [impl](const httplib::Request& req, httplib::Response& res) {
    send(res, impl->service.handle_predict(req.body, impl->request_seed()));
  });
  s.Get("/api/v1/schema", [impl](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string_view> tag;
    const auto header = req.get_header_value("If-None-Match");
    if (!header.empty()) tag = header;
    send(res, impl->service.handle_schema(tag));
  });
  s.Get("/api/v1/health", [impl](const httplib::Request&, httplib::Response& res) {
    send(res, impl->service.handle_health());
  });
  s.Get("/api/v1/model", [impl](const httplib::Request&, httplib::Response& res) {
    send(res, impl->service.handle_model());
  });
  if (!impl_->config.static_dir.empty() && !s.set_mount_point("/", impl_->config.static_dir)) {
    throw UsageError(fmt::format("static directory {} does not exist", impl_->config.static_dir));
  }
}

HttpServer::~HttpServer() {
  stop();
  wait();
}

void HttpServer::start() {
  auto& s = impl_->server;
  const auto& c = impl_->config;
  if (c.port == 0) {
    impl_->port = s.bind_to_any_port(c.address);
    if (impl_->port < 0) throw UsageError(fmt::format("cannot bind {}: no free port", c.address));
  } else {
    if (!s.bind_to_port(c.address, c.port)) {
      throw UsageError(fmt::format("cannot bind {}:{} (address in use or not permitted)", c.address, c.port));
    }
    impl_->port = c.port;
  }
  impl_->thread = std::thread([&s] { s.listen_after_bind(); });
  s.wait_until_ready();
}

void HttpServer::stop() { impl_->server.stop(); }

void HttpServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

int HttpServer::port() const { return impl_->port; }

}  // namespace durastack
