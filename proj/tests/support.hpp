// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "customdiff/checkpoint.hpp"
#include "customdiff/commands.hpp"
#include "customdiff/pipeline.hpp"
#include "customdiff/toyworld.hpp"

#ifndef CDIFF_DATA_DIR
#error "CDIFF_DATA_DIR must point at the bundled data directory"
#endif
#ifndef CDIFF_FIXTURE_DIR
#error "CDIFF_FIXTURE_DIR must point at the build fixture directory"
#endif

namespace cdiff::testing {

inline std::string data_path(const std::string& name) { return std::string(CDIFF_DATA_DIR) + "/" + name; }
inline std::string fixture_path(const std::string& name) { return std::string(CDIFF_FIXTURE_DIR) + "/" + name; }

/// The pretrained base model from the bundled config. Normally produced by
/// the fixture_pretrain ctest; pretrained here (about a minute) if absent.
inline const Pipeline& fixture_base() {
  static const Pipeline model = [] {
    const std::string path = fixture_path("base.cdck");
    if (!std::filesystem::exists(path)) {
      std::filesystem::create_directories(CDIFF_FIXTURE_DIR);
      run_command("pretrain", {{"config", data_path("config.json")}, {"out", path}});
    }
    return load_pipeline(path);
  }();
  return model;
}

/// Untrained model with the toy vocabulary, for fast structural tests.
/// The output head starts at zero, so K/V receive no gradient until it is
/// trained; `live_head` gives it random weights instead.
inline Pipeline tiny_model(std::uint64_t seed = 3, bool live_head = false) {
  ModelDims dims;
  Pipeline p{DenoiserNet::create(dims, seed), toy::make_vocabulary(dims.text_dim, 7),
             NoiseSchedule::scaled_linear(100), {}};
  if (live_head) {
    Matrix& head = p.net.params().at("output");
    Rng rng(seed + 100);
    head = gaussian(head.rows(), head.cols(), rng, 0.2);
  }
  return p;
}

/// Scratch directory under the build tree, emptied on creation.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(CDIFF_FIXTURE_DIR) / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace cdiff::testing
