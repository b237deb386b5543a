// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "customdiff/data.hpp"
#include "customdiff/pipeline.hpp"

namespace cdiff {

enum class TrainableScope { KvOnly, AllUnet };
enum class RegMode { Retrieved, Generated, None };

const char* scope_name(TrainableScope scope);
TrainableScope scope_from_name(std::string_view name);
const char* reg_mode_name(RegMode mode);
RegMode reg_mode_from_name(std::string_view name);

struct FineTuneConfig {
  std::size_t steps = 250;
  /// Plain SGD rate. Rates near 1e-3 leave the toy model's K/V almost
  /// untouched in 250 steps; 0.1 is the smallest that customizes reliably.
  double learning_rate = 0.1;
  std::size_t batch = 8;
  TrainableScope trainable_scope = TrainableScope::KvOnly;
  RegMode use_reg = RegMode::Retrieved;
  bool use_aug = true;
  bool optimize_modifier = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Images of one personal concept and the surface form of its modifier.
struct Concept {
  std::vector<ConceptExample> examples;
  std::string modifier;
};

struct TrainReport {
  std::vector<double> loss_curve;
  ParamRegistry final_params;
  std::vector<ModifierToken> modifier_embeddings;
  Pipeline tuned;
};

/// Called after every `every` steps with the step count and current model.
struct CheckpointHook {
  std::size_t every = 0;
  std::function<void(std::size_t step, const Pipeline& model)> fn;
};

/// Registry names updated under `scope` (modifier rows are handled apart).
std::set<std::string> trainable_set(const DenoiserNet& model, TrainableScope scope);

/// p <- p - lr * g.
void sgd_step(Matrix& param, const Matrix& grad, double lr);

/// Masked ε-loss training of the trainable set plus the concepts' modifier
/// rows. Several concepts train jointly on their pooled examples. `reg` is
/// ignored when cfg.use_reg is None and required otherwise.
TrainReport finetune(const Pipeline& model, std::span<const Concept> concepts,
                     const FineTuneConfig& cfg, const RegularizationSet* reg,
                     const CheckpointHook& hook = {});

/// Trains on concept a, then continues from the result on concept b.
TrainReport finetune_sequential(const Pipeline& model, const Concept& a, const Concept& b,
                                const FineTuneConfig& cfg_a, const FineTuneConfig& cfg_b,
                                const RegularizationSet* reg_a, const RegularizationSet* reg_b);

struct PretrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 16;
  double learning_rate = 2e-3;
  double caption_dropout = 0.1;
  std::uint64_t seed = 0;
};

/// Samples one (image, caption) training pair; empty caption = unconditional.
using ExampleSource = std::function<ConceptExample(Rng&)>;

/// Full-model training from scratch with Adam on every parameter.
DenoiserNet pretrain(const ModelDims& dims, const Vocabulary& vocab, const NoiseSchedule& sched,
                     const PretrainConfig& cfg, const ExampleSource& source,
                     std::vector<double>* loss_curve = nullptr);

}  // namespace cdiff
