// SPDX-License-Identifier: Apache-2.0
#include "customdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "customdiff/error.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

NoiseSchedule::NoiseSchedule(std::vector<double> alpha_bar) : alpha_bar_(std::move(alpha_bar)) {}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) fail(ErrorCode::InvalidInput, "NoiseSchedule: at least one timestep required");
  if (!(beta_start > 0.0) || !(beta_end >= beta_start) || !(beta_end < 1.0)) {
    fail(ErrorCode::InvalidInput, "NoiseSchedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> ab(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    const double beta = beta_start + frac * (beta_end - beta_start);
    prod *= 1.0 - beta;
    ab[i] = prod;
  }
  return from_alpha_bar(std::move(ab));
}

NoiseSchedule NoiseSchedule::scaled_linear(std::size_t steps) {
  if (steps == 0) fail(ErrorCode::InvalidInput, "NoiseSchedule: at least one timestep required");
  const double k = 1000.0 / static_cast<double>(steps);
  return linear(steps, std::min(1e-4 * k, 0.01), std::min(0.02 * k, 0.999));
}

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.empty()) fail(ErrorCode::InvalidInput, "NoiseSchedule: empty alpha_bar");
  for (std::size_t i = 0; i < alpha_bar.size(); ++i) {
    const double a = alpha_bar[i];
    if (!(a > 0.0 && a <= 1.0)) {
      fail(ErrorCode::InvalidInput, "NoiseSchedule: alpha_bar[" + std::to_string(i + 1) + "] outside (0, 1]");
    }
    if (i > 0 && !(a < alpha_bar[i - 1])) {
      fail(ErrorCode::InvalidInput, "NoiseSchedule: alpha_bar must be strictly decreasing");
    }
  }
  if (alpha_bar.front() < 0.99) fail(ErrorCode::InvalidInput, "NoiseSchedule: alpha_bar[1] must be >= 0.99");
  return NoiseSchedule(std::move(alpha_bar));
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t < 1 || t > alpha_bar_.size()) {
    fail(ErrorCode::InvalidInput, "timestep " + std::to_string(t) + " outside [1, " +
                                      std::to_string(alpha_bar_.size()) + "]");
  }
  return alpha_bar_[t - 1];
}

NoisySample forward_noise(const Matrix& x0, std::size_t t, const Matrix& eps,
                          const NoiseSchedule& sched) {
  if (!x0.same_shape(eps)) fail(ErrorCode::InvalidInput, "forward_noise: x0 and eps shapes differ");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  NoisySample out{Matrix(x0.rows(), x0.cols()), t, eps};
  for (std::size_t i = 0; i < x0.size(); ++i) out.x_t[i] = a * x0[i] + b * eps[i];
  return out;
}

double simple_loss(const Matrix& eps, const Matrix& eps_pred, double w_t) {
  if (!eps.same_shape(eps_pred)) fail(ErrorCode::InvalidInput, "simple_loss: shape mismatch");
  if (!(w_t >= 0.0)) fail(ErrorCode::InvalidInput, "simple_loss: w_t must be non-negative");
  if (eps.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const double d = eps[i] - eps_pred[i];
    s += d * d;
  }
  return w_t * s / static_cast<double>(eps.size());
}

double masked_loss(const Matrix& eps, const Matrix& eps_pred, const Matrix& mask, double w_t,
                   Matrix* grad) {
  if (!eps.same_shape(eps_pred) || !eps.same_shape(mask)) {
    fail(ErrorCode::InvalidInput, "masked_loss: shape mismatch");
  }
  double count = 0.0;
  for (double m : mask.data()) count += m;
  if (grad) *grad = Matrix(eps.rows(), eps.cols());
  if (count == 0.0) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double d = eps_pred[i] - eps[i];
    s += d * d;
    if (grad) (*grad)[i] = 2.0 * w_t * d / count;
  }
  return w_t * s / count;
}

Matrix combine_guidance(const Matrix& eps_uncond, const Matrix& eps_cond, double scale) {
  if (!eps_uncond.same_shape(eps_cond)) fail(ErrorCode::InvalidInput, "combine_guidance: shape mismatch");
  Matrix out(eps_cond.rows(), eps_cond.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
  }
  return out;
}

std::vector<std::size_t> sampling_timesteps(std::size_t steps, std::size_t T) {
  if (steps == 0) fail(ErrorCode::InvalidInput, "sampler: steps must be >= 1");
  std::vector<std::size_t> ts;
  if (steps >= T) {
    for (std::size_t t = 1; t <= T; ++t) ts.push_back(t);
    return ts;
  }
  if (steps == 1) return {T};
  for (std::size_t i = 0; i < steps; ++i) {
    const double pos = 1.0 + static_cast<double>(i) * static_cast<double>(T - 1) /
                                 static_cast<double>(steps - 1);
    const auto t = static_cast<std::size_t>(std::llround(pos));
    if (ts.empty() || t > ts.back()) ts.push_back(t);
  }
  return ts;
}

Matrix sample_guided(const EpsPredictor& predict, std::size_t rows, std::size_t cols,
                     const SamplerOptions& opts, const NoiseSchedule& sched) {
  if (!(opts.scale >= 0.0)) fail(ErrorCode::InvalidInput, "sampler: scale must be >= 0");
  const auto ts = sampling_timesteps(opts.steps, sched.steps());
  Rng rng(opts.seed);
  Matrix x = gaussian(rows, cols, rng);

  for (std::size_t k = ts.size(); k-- > 0;) {
    const std::size_t t = ts[k];
    const double ab = sched.alpha_bar(t);
    const double ab_prev = k == 0 ? 1.0 : sched.alpha_bar(ts[k - 1]);
    const double beta = 1.0 - ab / ab_prev;

    const Matrix eps_c = predict(x, t, true);
    Matrix guided;
    if (opts.scale == 1.0) {
      guided = eps_c;
    } else {
      const Matrix eps_u = predict(x, t, false);
      guided = combine_guidance(eps_u, eps_c, opts.scale);
    }
    if (!all_finite(guided)) {
      fail(ErrorCode::NumericalFailure, "sampler: non-finite prediction at t=" + std::to_string(t));
    }

    // Posterior q(x_{t-1} | x_t, x0_hat) with x0 recovered from the guided ε.
    const double sa = std::sqrt(ab);
    const double sb = std::sqrt(1.0 - ab);
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double var = k == 0 ? 0.0 : beta * (1.0 - ab_prev) / (1.0 - ab);
    const double sd = std::sqrt(var);
    Matrix next(rows, cols);
    for (std::size_t i = 0; i < x.size(); ++i) {
      double x0 = (x[i] - sb * guided[i]) / sa;
      if (opts.clip_denoised) x0 = std::clamp(x0, -1.0, 1.0);
      next[i] = c0 * x0 + ct * x[i];
    }
    if (k > 0) {
      const Matrix z = gaussian(rows, cols, rng);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += sd * z[i];
    }
    x = std::move(next);
    if (!all_finite(x)) {
      fail(ErrorCode::NumericalFailure, "sampler: non-finite state at t=" + std::to_string(t));
    }
    if (opts.on_step) opts.on_step(ts.size() - k, t, guided, x);
  }
  return x;
}

}  // namespace cdiff
