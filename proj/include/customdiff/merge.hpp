// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <span>
#include <string>
#include <vector>

#include "customdiff/analysis.hpp"
#include "customdiff/matrix.hpp"
#include "customdiff/pipeline.hpp"

namespace cdiff {

/// Constrained least squares: find W minimizing ‖(W − W0)·C_regᵀ‖_F
/// subject to W·Cᵀ = V, where column j of V is W_{owner(j)}·c_jᵀ.
struct MergeProblem {
  Matrix w0;                            // o×d
  std::vector<Matrix> concept_weights;  // N matrices, o×d
  Matrix target_features;               // C, s×d
  std::vector<std::size_t> owners;      // s entries in [0, N)
  Matrix reg_features;                  // C_reg, s_reg×d

  void validate() const;
};

struct MergeSolution {
  Matrix w_hat;
  double constraint_residual = 0.0;  // ‖Ŵ·Cᵀ − V‖_F
  double objective_value = 0.0;      // ‖(Ŵ − W0)·C_regᵀ‖_F
  double conditioning = 0.0;         // smallest singular value of d·Cᵀ
  double ridge = 0.0;                // added to C_regᵀC_reg when ill-conditioned
};

Matrix build_targets(const MergeProblem& problem);

/// Ŵ = W0 + vᵀ·d with d = C·(C_regᵀC_reg)⁻¹ and vᵀ = (V − W0·Cᵀ)·(d·Cᵀ)⁻¹.
MergeSolution solve_closed_form(const MergeProblem& problem);

/// Same optimum from the full stationarity + constraint system solved as
/// one dense linear system.
Matrix solve_kkt_oracle(const MergeProblem& problem);

double merge_objective(const MergeProblem& problem, const Matrix& w);
double merge_constraint_residual(const MergeProblem& problem, const Matrix& w);

/// Words that never become merge targets.
const std::set<std::string>& merge_stopwords();

struct LayerMergeInfo {
  std::string name;
  std::size_t targets = 0;
  double constraint_residual = 0.0;
  double objective_value = 0.0;
  double conditioning = 0.0;
  double ridge = 0.0;
};

struct MergedModel {
  Pipeline model;
  std::vector<LayerMergeInfo> layers;
};

/// Merges N K/V deltas into one model. Targets are the content words of
/// each concept's captions (features from that concept's embeddings); the
/// regularizer is every token of `reg_captions` under the base embeddings.
MergedModel merge_model(const Pipeline& base, std::span<const DeltaCheckpoint> deltas,
                        std::span<const std::vector<std::string>> captions,
                        std::span<const std::string> reg_captions);

}  // namespace cdiff
