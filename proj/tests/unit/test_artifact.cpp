#include <cmath>
#include <sstream>

#include <doctest.h>

#include "durastack/errors.hpp"
#include "durastack/stack.hpp"
#include "support/fixtures.hpp"

using namespace durastack;

namespace {

std::string message_of(std::string_view bytes) {
  try {
    deserialize(bytes);
  } catch (const ArtifactError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("artifact") {

TEST_CASE("save, load, predict round trip") {
  const auto& s = fixtures::small_study();
  const auto& model = s.result.model;
  std::stringstream buffer;
  save(model, buffer);
  auto loaded = load(buffer);
  CHECK(serialize(loaded) == serialize(model));
  CHECK(loaded.meta == model.meta);
  for (const auto& p : loaded.pipelines) check_weights(p.weights);

  auto test = encode(s.test, &model.meta);
  auto a = predict_pipelines(model, test, true, 4);
  auto b = predict_pipelines(loaded, test, true, 4);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  auto pa = predict_one(model, predictors_of(s.test[0]), 2);
  auto pb = predict_one(loaded, predictors_of(s.test[0]), 2);
  CHECK(std::abs(pa.log_pred_mean - pb.log_pred_mean) <= 1e-12);
}

TEST_CASE("file round trip and manifest") {
  const auto& model = fixtures::small_study().result.model;
  auto dir = fixtures::scratch("artifact");
  save_file(model, dir / "model.dsm");
  auto loaded = load_file(dir / "model.dsm");
  CHECK(serialize(loaded) == serialize(model));
  auto bytes = serialize(model);
  auto manifest = read_manifest(bytes);
  CHECK(manifest["format"] == "durastack-model");
  CHECK(manifest["format_version"] == kArtifactVersion);
  CHECK(manifest["endianness"] == "little");
  CHECK(manifest["pipelines"].size() == 2);
  CHECK(bytes.compare(0, 8, kArtifactMagic) == 0);
}

TEST_CASE("older format version is refused by version, not checksum") {
  auto bytes = serialize(fixtures::small_study().result.model);
  bytes[8] = 0;
  bytes[9] = 0;
  bytes[10] = 0;
  bytes[11] = 0;
  auto msg = message_of(bytes);
  CHECK(msg.find("version 0") != std::string::npos);
  CHECK(msg.find("version 1") != std::string::npos);
}

TEST_CASE("truncated and corrupted artifacts are refused") {
  auto bytes = serialize(fixtures::small_study().result.model);
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize(std::string_view(bytes).substr(0, cut)), ArtifactError);
  }
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  CHECK(message_of(flipped).find("checksum") != std::string::npos);
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_FALSE(message_of(magic).empty());
  CHECK_THROWS_AS(deserialize(bytes + "x"), ArtifactError);
  CHECK_THROWS_AS(load_file(fixtures::scratch("artifact-missing") / "none.dsm"), DataError);
}

}
