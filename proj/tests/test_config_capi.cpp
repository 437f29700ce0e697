#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <udair.h>

#include <filesystem>
#include <fstream>

#include "config.hpp"

namespace fs = std::filesystem;
using namespace udair;

TEST_CASE("profiles expose the documented tunables") {
  RunConfig ci = RunConfig::profile("ci");
  CHECK(ci.root().at("model").at("base_dim") == 8);
  CHECK(ci.model_config().backbone.block_kind == BlockKind::Conv);

  RunConfig paper = RunConfig::profile("paper");
  const auto& r = paper.root();
  CHECK(r.at("model").at("daam_dim") == 96);
  CHECK(r.at("model").at("base_dim") == 24);
  CHECK(r.at("data").at("crop") == 128);
  CHECK(r.at("train").at("alpha") == 1.0);
  CHECK(r.at("train").at("beta") == 0.2);
  CHECK(r.at("train").at("lr") == 1e-4);
  CHECK(r.at("train").at("schedule") == "cosine");
  CHECK(r.at("tta").at("steps") == 5);
  ModelConfig mc = paper.model_config();
  CHECK(mc.backbone.bottleneck_dim() == 8 * 24);
  CHECK(mc.backbone.downsample_factor() == 8);

  CHECK_THROWS_AS(RunConfig::profile("nope"), ConfigError);
}

TEST_CASE("dotted-key overrides are typed and reject unknown keys") {
  RunConfig cfg = RunConfig::profile("ci");
  cfg.set("train.lr", "5e-4");
  CHECK(cfg.root().at("train").at("lr") == 5e-4);
  cfg.set("train.steps", "42");
  CHECK(cfg.root().at("train").at("steps") == 42);
  cfg.set("data.augment", "false");
  CHECK(cfg.root().at("data").at("augment") == false);
  cfg.set("train.variant", "no_cscl");
  CHECK(cfg.variant() == Variant::NoCscl);
  cfg.set("data.ranges.noise.source.sigma", "0.01,0.05");
  CHECK(cfg.root().at("data").at("ranges").at("noise").at("source").at("sigma")[0] == 0.01);

  CHECK_THROWS_AS(cfg.set("no.such.key", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.unknown", "1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train.steps", "not-a-number"), ConfigError);
  CHECK_THROWS_AS(cfg.set("data.augment", "maybe"), ConfigError);
  CHECK_THROWS_AS(cfg.set("train", "1"), ConfigError);
}

TEST_CASE("config files merge over the profile with schema checking") {
  fs::path dir = fs::temp_directory_path() / "udair_cfg";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "ok.json");
    f << R"({"train": {"lr": 0.002, "steps": 7}, "seed": 9})";
  }
  RunConfig cfg = RunConfig::profile("ci");
  cfg.merge_file((dir / "ok.json").string());
  CHECK(cfg.root().at("train").at("lr") == 0.002);
  CHECK(cfg.root().at("train").at("steps") == 7);
  CHECK(cfg.seed() == 9);

  {
    std::ofstream f(dir / "bad_key.json");
    f << R"({"train": {"nonexistent": 1}})";
  }
  RunConfig cfg2 = RunConfig::profile("ci");
  CHECK_THROWS_AS(cfg2.merge_file((dir / "bad_key.json").string()), ConfigError);

  {
    std::ofstream f(dir / "bad_type.json");
    f << R"({"train": {"lr": "fast"}})";
  }
  CHECK_THROWS_AS(cfg2.merge_file((dir / "bad_type.json").string()), ConfigError);

  {
    std::ofstream f(dir / "bad.json");
    f << "{not json";
  }
  CHECK_THROWS_AS(cfg2.merge_file((dir / "bad.json").string()), ConfigError);
  CHECK_THROWS_AS(cfg2.merge_file((dir / "missing.json").string()), IoError);

  // snapshot round trip
  RunConfig cfg3 = RunConfig::profile("ci");
  cfg3.set("train.lr", "0.004");
  cfg3.write_snapshot((dir / "snap.json").string());
  RunConfig cfg4 = RunConfig::profile("ci");
  cfg4.merge_file((dir / "snap.json").string());
  CHECK(cfg4.root() == cfg3.root());
}

TEST_CASE("c api: handles, error codes, and last-error messages") {
  udair_config* cfg = nullptr;
  CHECK(udair_config_create("bogus", &cfg) == UDAIR_ERR_CONFIG);
  CHECK(std::string(udair_last_error()).find("profile") != std::string::npos);
  CHECK(cfg == nullptr);

  REQUIRE(udair_config_create("ci", &cfg) == UDAIR_OK);
  REQUIRE(cfg != nullptr);

  CHECK(udair_config_set(cfg, "train.lr", "1e-3") == UDAIR_OK);
  CHECK(udair_config_set(cfg, "bogus.key", "1") == UDAIR_ERR_CONFIG);
  CHECK(udair_config_set(nullptr, "train.lr", "1") == UDAIR_ERR_CONFIG);
  CHECK(udair_config_load_file(cfg, "/definitely/missing.json") == UDAIR_ERR_IO);

  size_t need = 0;
  CHECK(udair_config_dump(cfg, nullptr, 0, &need) == UDAIR_OK);
  CHECK(need > 100);
  std::vector<char> buf(need + 1);
  CHECK(udair_config_dump(cfg, buf.data(), buf.size(), &need) == UDAIR_OK);
  CHECK(std::string(buf.data()).find("\"profile\": \"ci\"") != std::string::npos);
  char tiny[4];
  CHECK(udair_config_dump(cfg, tiny, sizeof(tiny), nullptr) == UDAIR_ERR_CONFIG);

  long long n = 0;
  CHECK(udair_count_params(cfg, "theta_a", nullptr, &n) == UDAIR_OK);
  CHECK(n > 0);
  long long total = 0;
  CHECK(udair_count_params(cfg, nullptr, nullptr, &total) == UDAIR_OK);
  CHECK(total > n);
  CHECK(udair_count_params(cfg, "theta_z", nullptr, &n) == UDAIR_ERR_CONFIG);

  // eval without a checkpoint is a configuration error
  fs::path dir = fs::temp_directory_path() / "udair_capi_out";
  CHECK(udair_eval(cfg, "target", 0, (dir / "eval").string().c_str()) == UDAIR_ERR_CONFIG);
  CHECK(udair_eval(cfg, "mars", 0, (dir / "eval").string().c_str()) == UDAIR_ERR_CONFIG);

  udair_config_destroy(cfg);
  udair_config_destroy(nullptr);  // must be a no-op
  CHECK(std::string(udair_version()) == "0.1.0");
}

TEST_CASE("c api synth-data writes the dataset and the config snapshot") {
  fs::path dir = fs::temp_directory_path() / "udair_capi_synth";
  fs::remove_all(dir);
  udair_config* cfg = nullptr;
  REQUIRE(udair_config_create("ci", &cfg) == UDAIR_OK);
  REQUIRE(udair_config_set(cfg, "data.image_size", "16") == UDAIR_OK);
  REQUIRE(udair_config_set(cfg, "data.train_per_task", "2") == UDAIR_OK);
  REQUIRE(udair_config_set(cfg, "data.test_per_task", "1") == UDAIR_OK);
  CHECK(udair_synth_data(cfg, dir.string().c_str()) == UDAIR_OK);
  CHECK(fs::exists(dir / "config.json"));
  CHECK(fs::exists(dir / "source" / "noise" / "train" / "input" / "0001.png"));
  CHECK(fs::exists(dir / "target" / "underwater" / "test" / "specs.json"));
  udair_config_destroy(cfg);
}
