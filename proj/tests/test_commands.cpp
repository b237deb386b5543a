// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>

#include "customdiff/error.hpp"
#include "support.hpp"

using namespace cdiff;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("experiment config parsing") {
  const ExperimentConfig d;
  CHECK(d.sampler_steps == 200);
  CHECK(d.sampler_scale == 6.0);
  const auto round = ExperimentConfig::from_json(d.to_json());
  CHECK(round.to_json() == d.to_json());
  CHECK(code_of([] { ExperimentConfig::from_json({{"seeds", 1}}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { ExperimentConfig::from_json({{"finetune", {{"lr", 1}}}}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { ExperimentConfig::from_json({{"sampler", {{"steps", 0}}}}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { ExperimentConfig::from_json({{"sampler", {{"steps", -3}}}}); }) == ErrorCode::InvalidInput);
  CHECK(code_of([] { ExperimentConfig::from_json({{"finetune", {{"use_reg", "yes"}}}}); }) == ErrorCode::InvalidInput);
  try {
    ExperimentConfig::from_json({{"retrieval", {{"threshold", 2.0}}}});
    FAIL("expected a validation error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("retrieval.threshold") != std::string::npos);
  }
  const auto bundled = ExperimentConfig::load(testing::data_path("config.json"));
  CHECK(bundled.pretrain.steps == 10000);
  CHECK(bundled.finetune_steps_set);
  CHECK_FALSE(d.finetune_steps_set);
}

TEST_CASE("command option validation") {
  CHECK(code_of([] { run_command("fly", json::object()); }) == ErrorCode::Usage);
  CHECK(code_of([] { run_command("sample", {{"bogus", 1}}); }) == ErrorCode::Usage);
  CHECK(code_of([] { run_command("sample", {{"prompt", "a dog"}}); }) == ErrorCode::Usage);
  const std::string dir = testing::scratch_dir("commands");
  save_pipeline(dir + "/m.cdck", testing::tiny_model(), CheckpointKind::Base);
  CHECK(code_of([&] {
          run_command("sample", {{"model", dir + "/m.cdck"}, {"prompt", "a dog"}, {"steps", 0}, {"out", dir + "/s"}});
        }) == ErrorCode::InvalidInput);
  CHECK(command_names().size() == 8);
}

TEST_CASE("sample defaults to 200 steps at scale 6 and writes PGM") {
  const std::string dir = testing::scratch_dir("sample");
  save_pipeline(dir + "/m.cdck", testing::tiny_model(), CheckpointKind::Base);
  run_command("sample", {{"model", dir + "/m.cdck"}, {"prompt", "photo of a dog"}, {"out", dir + "/s"}});
  const auto j = json::parse(read_file(dir + "/s.json"));
  CHECK(j.at("steps") == 200);
  CHECK(j.at("scale") == 6.0);
  const std::string pgm = read_file(dir + "/s_0.pgm");
  CHECK(pgm.starts_with("P5\n8 8\n255\n"));
  CHECK(pgm.size() == 11 + 64);
  CHECK(std::filesystem::exists(dir + "/s.json.run.json"));
}

TEST_CASE("to_pgm maps [-1, 1] onto [0, 255]") {
  Matrix m(1, 3);
  m(0, 0) = -1.0;
  m(0, 1) = 1.0;
  m(0, 2) = 0.0;
  const std::string p = to_pgm(m);
  CHECK(static_cast<unsigned char>(p[p.size() - 3]) == 0);
  CHECK(static_cast<unsigned char>(p[p.size() - 2]) == 255);
  CHECK(static_cast<unsigned char>(p[p.size() - 1]) == 128);
}

TEST_CASE("fnv1a reference values") {
  CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar") == 0x85944171f73967e8ULL);
}
