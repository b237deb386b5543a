// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "customdiff/matrix.hpp"

namespace cdiff {

/// Cumulative signal fractions alpha_bar[t] for t = 1..T.
class NoiseSchedule {
 public:
  /// Linear beta schedule between beta_start and beta_end.
  static NoiseSchedule linear(std::size_t steps, double beta_start, double beta_end);
  /// Linear schedule with the usual 1e-4..0.02 endpoints rescaled to `steps`.
  static NoiseSchedule scaled_linear(std::size_t steps);
  /// Explicit alpha_bar values (t = 1 first). Must be in (0, 1], strictly
  /// decreasing, with alpha_bar[1] >= 0.99.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

  std::size_t steps() const noexcept { return alpha_bar_.size(); }
  double alpha_bar(std::size_t t) const;
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }

 private:
  explicit NoiseSchedule(std::vector<double> alpha_bar);
  std::vector<double> alpha_bar_;
};

struct NoisySample {
  Matrix x_t;
  std::size_t t = 0;
  Matrix eps;
};

NoisySample forward_noise(const Matrix& x0, std::size_t t, const Matrix& eps,
                          const NoiseSchedule& sched);

/// w_t · mean((eps − eps_pred)²).
double simple_loss(const Matrix& eps, const Matrix& eps_pred, double w_t = 1.0);

/// Mean squared error restricted to entries where mask == 1. The gradient
/// with respect to eps_pred is written to `grad` when non-null.
double masked_loss(const Matrix& eps, const Matrix& eps_pred, const Matrix& mask, double w_t,
                   Matrix* grad);

/// ε_uncond + scale·(ε_cond − ε_uncond)
Matrix combine_guidance(const Matrix& eps_uncond, const Matrix& eps_cond, double scale);

/// Noise predictor callback: (x_t, t, conditional) -> predicted ε.
using EpsPredictor = std::function<Matrix(const Matrix& x_t, std::size_t t, bool conditional)>;

struct SamplerOptions {
  std::size_t steps = 200;
  double scale = 6.0;
  std::uint64_t seed = 0;
  bool clip_denoised = true;
  // Observes (step index from 1, timestep, guided ε, x after the step).
  std::function<void(std::size_t, std::size_t, const Matrix&, const Matrix&)> on_step;
};

/// Timesteps visited by the sampler, ascending. All of 1..T when steps >= T,
/// otherwise `steps` evenly spaced timesteps including 1 and T.
std::vector<std::size_t> sampling_timesteps(std::size_t steps, std::size_t T);

/// Ancestral DDPM sampling with classifier-free guidance over respaced
/// timesteps, posterior variance, and a noise-free final step.
Matrix sample_guided(const EpsPredictor& predict, std::size_t rows, std::size_t cols,
                     const SamplerOptions& opts, const NoiseSchedule& sched);

}  // namespace cdiff
