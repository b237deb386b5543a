// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string_view>
#include <vector>

#include "customdiff/denoiser.hpp"
#include "customdiff/diffusion.hpp"
#include "customdiff/text.hpp"

namespace cdiff {

/// Guided sampling of one image from `model` with caption features `cond`
/// and the empty-caption features `uncond`.
Matrix sample_cfg(const DenoiserNet& model, const Matrix& cond, const Matrix& uncond,
                  const SamplerOptions& opts, const NoiseSchedule& sched);

/// A complete text-to-image model: denoiser, frozen text encoder (the
/// embedding table, with trainable modifier rows), and noise schedule.
struct Pipeline {
  DenoiserNet net;
  Vocabulary vocab;
  NoiseSchedule schedule;
  std::vector<ModifierToken> modifiers;

  Matrix features(std::string_view caption) const;
  Matrix sample(std::string_view prompt, const SamplerOptions& opts) const;
  /// `count` samples with per-sample seeds derived from opts.seed.
  std::vector<Matrix> sample_many(std::string_view prompt, std::size_t count,
                                  const SamplerOptions& opts) const;

  const ModifierToken* find_modifier(std::string_view surface) const;
  /// Copies the current vocabulary rows back into `modifiers`.
  void sync_modifiers();
  /// Registers a new modifier token (fresh rare row) and returns it.
  const ModifierToken& add_modifier(std::string surface);
};

}  // namespace cdiff
