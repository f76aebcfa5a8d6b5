#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "featxlate/config.hpp"
#include "featxlate/error.hpp"
#include "fixtures.hpp"

using namespace featxlate;
using json = nlohmann::json;

namespace {

std::string config_error(const json& user, const std::vector<std::string>& overrides = {}) {
  try {
    parse_config(user, overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults carry the published hyperparameters") {
    auto c = parse_config(json::object());
    CHECK(c.weights.gp == 10.0);
    CHECK(c.weights.cyc == 100.0);
    CHECK(c.weights.idty == 100.0);
    CHECK(c.schedule.epochs == 400);
    CHECK(c.schedule.lr == doctest::Approx(1e-4));
    CHECK(c.schedule.beta1 == 0.5);
    CHECK(c.schedule.beta2 == 0.999);
    CHECK(c.schedule.batch_size == 10);
    CHECK(c.schedule.critic_steps == 4);
    CHECK(c.inverter_schedule.batch_size == 25);
    CHECK(c.inverter_weights.reconstruction == 100.0);
    CHECK(c.inverter_weights.adversarial == 1.0);
    CHECK(c.levels == std::vector<int>{5, 4, 3});
    CHECK(c.stage.name() == "deepest");
  }

  TEST_CASE("unknown keys are rejected with their path") {
    auto msg = config_error({{"schedule", {{"epochz", 3}}}});
    CHECK(msg.find("schedule.epochz") != std::string::npos);
    msg = config_error({{"bogus", 1}});
    CHECK(msg.find("bogus") != std::string::npos);
    msg = config_error({{"domains", {{"A", {{"coco", {{"categry", "cat"}}}}}}}});
    CHECK(msg.find("domains.A.coco.categry") != std::string::npos);
  }

  TEST_CASE("type and range errors name the key") {
    CHECK(config_error({{"schedule", {{"epochs", "many"}}}}).find("schedule.epochs") != std::string::npos);
    CHECK(config_error({{"schedule", {{"critic_steps", 0}}}}).find("schedule") != std::string::npos);
    CHECK(config_error({{"loss_weights", {{"cyc", -1.0}}}}).find("loss_weights") != std::string::npos);
    CHECK(config_error({{"levels", {5, 3}}}).find("levels") != std::string::npos);
    CHECK(config_error({{"encoder", {{"profile", "resnet"}}}}).find("encoder.profile") != std::string::npos);
    CHECK_FALSE(config_error({{"stage", {{"kind", "conditional"}, {"level", 5}}}}).empty());
  }

  TEST_CASE("overrides apply after the file and are validated") {
    json user = {{"schedule", {{"epochs", 7}}}};
    auto c = parse_config(user, {"schedule.epochs=3", "stage.kind=conditional", "stage.level=4"});
    CHECK(c.schedule.epochs == 3);
    CHECK(c.stage.name() == "conditional_L4");
    CHECK(config_error(user, {"schedule.epoch=3"}).find("schedule.epoch") != std::string::npos);
    CHECK_FALSE(config_error(user, {"novalue"}).empty());
  }

  TEST_CASE("inverter stage resolves the domain id") {
    json user = {{"domains", {{"A", {{"id", "cats"}}}, {"B", {{"id", "dogs"}}}}},
                 {"stage", {{"kind", "inverter"}, {"level", 3}, {"domain", "B"}}}};
    auto c = parse_config(user);
    CHECK(c.stage.name() == "inverter_dogs_L3");
    CHECK(c.domain("A").id == "cats");
  }

  TEST_CASE("config hash ignores paths; lineage ignores the stage and schedule") {
    auto base = parse_config(json::object());
    auto moved = parse_config({{"paths", {{"logs", "/elsewhere"}}}});
    auto longer = parse_config({{"schedule", {{"epochs", 5}}}});
    auto other_stage = parse_config({{"stage", {{"kind", "conditional"}, {"level", 4}}}});
    auto other_encoder = parse_config({{"encoder", {{"seed", 9}}}});
    CHECK(base.config_hash() == moved.config_hash());
    CHECK(base.config_hash() != longer.config_hash());
    CHECK(base.lineage_hash() == longer.lineage_hash());
    CHECK(base.lineage_hash() == other_stage.lineage_hash());
    CHECK(base.lineage_hash() != other_encoder.lineage_hash());
    CHECK(base.config_hash().size() == 16);
  }

  TEST_CASE("cache root falls back to the environment") {
    ::setenv("FEATXLATE_CACHE_ROOT", "/tmp/fx-env-cache", 1);
    CHECK(parse_config(json::object()).cache_dir == "/tmp/fx-env-cache");
    CHECK(parse_config({{"paths", {{"cache", "/explicit"}}}}).cache_dir == "/explicit");
    ::unsetenv("FEATXLATE_CACHE_ROOT");
    CHECK(parse_config(json::object()).cache_dir == "featxlate_cache");
  }

  TEST_CASE("load_config reads a file") {
    fxtest::TempDir dir;
    {
      std::ofstream out(dir / "run.json");
      out << R"({"encoder": {"profile": "toy", "input_side": 32}})";
    }
    auto c = load_config(dir / "run.json");
    CHECK(c.encoder_profile == "toy");
    CHECK(c.toy_input_side == 32);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), NotFoundError);
    {
      std::ofstream out(dir / "bad.json");
      out << "{ not json";
    }
    CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  }

  TEST_CASE("vgg19 profile needs weights or explicit random weights") {
    CHECK_THROWS_AS(make_encoder(parse_config(json::object())), ConfigError);
  }
}
