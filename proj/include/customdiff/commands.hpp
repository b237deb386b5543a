// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "customdiff/denoiser.hpp"
#include "customdiff/diffusion.hpp"
#include "customdiff/evaluation.hpp"
#include "customdiff/finetune.hpp"

namespace cdiff {

inline constexpr const char* kVersion = "0.1.0";

/// Everything a run needs besides file paths given on the command line.
/// Parsing rejects unknown keys and validates every section.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelDims model;
  std::size_t schedule_steps = 100;
  std::uint64_t vocab_seed = 7;
  PretrainConfig pretrain;
  FineTuneConfig finetune;
  bool finetune_steps_set = false;
  std::size_t sampler_steps = 200;
  double sampler_scale = 6.0;
  double retrieval_threshold = 0.85;
  std::size_t retrieval_cap = 200;
  std::uint64_t featurizer_seed = 5;
  std::size_t featurizer_dim = 32;
  std::size_t calibration_per_category = 40;
  // Optional file paths, resolved against the config file's directory.
  std::string vocab_path;
  std::string calibration_path;

  static ExperimentConfig from_json(const nlohmann::json& j, const std::string& base_dir = "");
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Base vocabulary: the file named by the config, else the bundled toy one.
Vocabulary config_vocabulary(const ExperimentConfig& cfg);

/// Frozen metric embedder built from the untouched vocabulary table.
ReferenceFeaturizer config_featurizer(const ExperimentConfig& cfg, const Vocabulary& base_vocab);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);

/// Writes `<artifact>.run.json` describing how the artifact was produced.
void write_run_manifest(const std::string& artifact, std::string_view command,
                        const nlohmann::json& options, const nlohmann::json& config);

/// Binary P5 graymap with [-1, 1] mapped onto [0, 255].
std::string to_pgm(const Matrix& image);

const std::vector<std::string>& command_names();

/// Runs one subcommand. Options mirror the CLI flags (see README); unknown
/// options raise a Usage error. Returns a short human-readable summary.
std::string run_command(std::string_view name, const nlohmann::json& options);

}  // namespace cdiff
