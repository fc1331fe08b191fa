#include <future>
#include <set>

#include <doctest.h>

#include "durastack/serve.hpp"
#include "support/fixtures.hpp"

#include <httplib.h>

using namespace durastack;

namespace {

std::shared_ptr<const LockedModel> small_model() {
  static const auto model = std::make_shared<const LockedModel>(fixtures::small_study().result.model);
  return model;
}

nlohmann::json full_request() {
  return {{"surgery_date", "2024-03-05"},
          {"admission", true},
          {"scheduled_duration_min", 120},
          {"general_anaesthesia", true},
          {"pos_supine", true},
          {"pos_prone", false},
          {"pos_sitting", false},
          {"pos_lithotomy", false},
          {"pos_lateral", false},
          {"pos_other", false},
          {"sex", "F"},
          {"age_years", 61},
          {"bmi", 23.4},
          {"allergy", false},
          {"infection", false},
          {"comorbidity", true},
          {"asa", 2}};
}

}  // namespace

TEST_SUITE("serve") {

TEST_CASE("missing bmi is imputed") {
  PredictionService service(small_model());
  auto req = full_request();
  req.erase("bmi");
  req["seed"] = 7;
  auto r = service.handle_predict(req.dump(), 1);
  REQUIRE(r.status == 200);
  auto body = nlohmann::json::parse(r.body);
  CHECK(body["imputed_fields"] == nlohmann::json::array({"bmi"}));
  CHECK(body["predicted_minutes"].get<double>() > 0.0);
  CHECK(body["per_pipeline_log"].size() == 2);
  CHECK(body["seed"] == 7);
  CHECK(body["schema_version"] == "1");
  req["bmi"] = nullptr;
  CHECK(nlohmann::json::parse(service.handle_predict(req.dump(), 1).body) == body);
}

TEST_CASE("fully specified request imputes nothing") {
  PredictionService service(small_model());
  auto r = service.handle_predict(full_request().dump(), 3);
  REQUIRE(r.status == 200);
  CHECK(nlohmann::json::parse(r.body)["imputed_fields"].empty());
}

TEST_CASE("surgeon fields and bad values are rejected") {
  PredictionService service(small_model());
  auto req = full_request();
  req["surgeon_id"] = "D17";
  auto r = service.handle_predict(req.dump(), 1);
  CHECK(r.status == 400);
  auto body = nlohmann::json::parse(r.body);
  CHECK(body["fields"][0]["field"] == "surgeon_id");
  auto asa = full_request();
  asa["asa"] = 5;
  CHECK(service.handle_predict(asa.dump(), 1).status == 400);
  auto typed = full_request();
  typed["bmi"] = "heavy";
  CHECK(service.handle_predict(typed.dump(), 1).status == 400);
  CHECK(service.handle_predict("{not json", 1).status == 400);
  CHECK(service.handle_predict("[1,2]", 1).status == 400);
  auto weekend = full_request();
  weekend["surgery_date"] = "2024-03-09";
  CHECK(service.handle_predict(weekend.dump(), 1).status == 400);
}

TEST_CASE("health, schema and model endpoints") {
  PredictionService service;
  CHECK(service.handle_health().status == 503);
  CHECK(service.handle_predict(full_request().dump(), 1).status == 503);
  service.set_model(small_model());
  auto h = service.handle_health();
  CHECK(h.status == 200);
  CHECK(nlohmann::json::parse(h.body)["pipelines"] == 2);
  auto s = service.handle_schema();
  CHECK(s.status == 200);
  const auto etag = s.headers.at("ETag");
  CHECK(service.handle_schema(etag).status == 304);
  auto schema = nlohmann::json::parse(s.body);
  std::set<std::string> names;
  for (const auto& f : schema["fields"]) names.insert(f["name"].get<std::string>());
  CHECK(names.size() == predictor_field_names().size());
  CHECK_FALSE(names.contains("surgeon_id"));
  auto m = nlohmann::json::parse(service.handle_model().body);
  CHECK(m["pipelines"].size() == 2);
  CHECK(m["disclaimer"] == std::string(kDisclaimer));
}

TEST_CASE("concurrent identical seeded requests give identical bodies") {
  PredictionService service(small_model());
  ServeConfig config;
  config.port = 0;
  config.workers = 8;
  HttpServer server(service, config);
  server.start();
  auto req = full_request();
  req.erase("bmi");
  req.erase("asa");
  req["seed"] = 12345;
  const auto body = req.dump();
  std::vector<std::future<std::pair<int, std::string>>> calls;
  for (int i = 0; i < 100; ++i) {
    calls.push_back(std::async(std::launch::async, [&] {
      httplib::Client client("127.0.0.1", server.port());
      client.set_read_timeout(30, 0);
      auto res = client.Post("/api/v1/predict", body, "application/json");
      return res ? std::pair{res->status, res->body} : std::pair{-1, std::string()};
    }));
  }
  std::set<std::string> bodies;
  int ok = 0;
  for (auto& c : calls) {
    auto [status, text] = c.get();
    ok += status == 200 ? 1 : 0;
    bodies.insert(text);
  }
  CHECK(ok == 100);
  CHECK(bodies.size() == 1);
  httplib::Client client("127.0.0.1", server.port());
  auto health = client.Get("/api/v1/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  server.stop();
  server.wait();
}

}
