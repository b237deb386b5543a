// SPDX-License-Identifier: Apache-2.0
#include "customdiff/merge.hpp"

#include <algorithm>
#include <map>

#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"

namespace cdiff {

namespace {

constexpr double kDegenerateRatio = 1e-10;
constexpr double kSingularRatio = 1e-12;

struct Regularizer {
  Matrix gram;
  double ridge = 0.0;
};

Regularizer regularizer(const MergeProblem& p) {
  const std::size_t d = p.w0.cols();
  if (p.reg_features.rows() < d) {
    fail(ErrorCode::DegenerateRegularization,
         "merge: " + std::to_string(p.reg_features.rows()) + " regularization rows cannot span " +
             std::to_string(d) + " feature dimensions");
  }
  Regularizer r{matmul_tn(p.reg_features, p.reg_features), 0.0};
  const auto sigma = linalg::thin_svd(r.gram).sigma;
  if (sigma.front() == 0.0) fail(ErrorCode::DegenerateRegularization, "merge: regularization features are all zero");
  if (sigma.back() < kDegenerateRatio * sigma.front()) {
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += r.gram(i, i);
    r.ridge = linalg::kAutoRidgeLambda * trace / static_cast<double>(d);
    for (std::size_t i = 0; i < d; ++i) r.gram(i, i) += r.ridge;
  }
  return r;
}

}  // namespace

void MergeProblem::validate() const {
  const std::size_t o = w0.rows();
  const std::size_t d = w0.cols();
  if (o == 0 || d == 0) fail(ErrorCode::InvalidInput, "merge: empty W0");
  if (concept_weights.empty()) fail(ErrorCode::InvalidInput, "merge: no concept weights");
  for (const auto& w : concept_weights)
    if (w.rows() != o || w.cols() != d) fail(ErrorCode::InvalidInput, "merge: concept weight shape differs from W0");
  if (target_features.rows() == 0) fail(ErrorCode::InvalidInput, "merge: no target features");
  if (target_features.cols() != d || reg_features.cols() != d) {
    fail(ErrorCode::InvalidInput, "merge: feature width differs from W0 columns");
  }
  if (owners.size() != target_features.rows()) fail(ErrorCode::InvalidInput, "merge: one owner per target row required");
  for (std::size_t o_idx : owners)
    if (o_idx >= concept_weights.size()) fail(ErrorCode::InvalidInput, "merge: owner index out of range");
  if (!all_finite(w0) || !all_finite(target_features) || !all_finite(reg_features)) {
    fail(ErrorCode::InvalidInput, "merge: non-finite input");
  }
}

Matrix build_targets(const MergeProblem& problem) {
  problem.validate();
  const Matrix& c = problem.target_features;
  Matrix v(problem.w0.rows(), c.rows());
  for (std::size_t j = 0; j < c.rows(); ++j) {
    const Matrix& w = problem.concept_weights[problem.owners[j]];
    for (std::size_t i = 0; i < w.rows(); ++i) v(i, j) = dot(w.row(i), c.row(j));
  }
  return v;
}

double merge_objective(const MergeProblem& problem, const Matrix& w) {
  return linalg::frobenius_norm(matmul_nt(w - problem.w0, problem.reg_features));
}

double merge_constraint_residual(const MergeProblem& problem, const Matrix& w) {
  return linalg::frobenius_norm(matmul_nt(w, problem.target_features) - build_targets(problem));
}

MergeSolution solve_closed_form(const MergeProblem& problem) {
  problem.validate();
  const Matrix& c = problem.target_features;
  const Regularizer reg = regularizer(problem);
  const Matrix v = build_targets(problem);
  // W0·Cᵀ with the same dot order as build_targets, so a no-op merge is exact.
  const Matrix resid = v - matmul_nt(problem.w0, c);

  // d = C·G⁻¹; G is symmetric so dᵀ = G⁻¹·Cᵀ.
  const Matrix d = linalg::solve_linear(reg.gram, c.transposed()).transposed();
  const Matrix dct = matmul_nt(d, c);
  const auto sigma = linalg::thin_svd(dct).sigma;
  MergeSolution sol;
  sol.ridge = reg.ridge;
  sol.conditioning = sigma.back();
  if (!(sigma.back() > kSingularRatio * sigma.front())) {
    fail(ErrorCode::SingularTargetSystem,
         "merge: target features are linearly dependent (d·Cᵀ is singular); deduplicate the target rows");
  }

  bool noop = true;
  for (double x : resid.data()) noop = noop && x == 0.0;
  if (noop) {
    sol.w_hat = problem.w0;
  } else {
    // vᵀ·(d·Cᵀ) = resid  <=>  (d·Cᵀ)ᵀ·v = residᵀ
    const Matrix vt = linalg::solve_linear(dct.transposed(), resid.transposed()).transposed();
    sol.w_hat = problem.w0 + matmul(vt, d);
  }
  sol.constraint_residual = linalg::frobenius_norm(matmul_nt(sol.w_hat, c) - v);
  sol.objective_value = merge_objective(problem, sol.w_hat);
  return sol;
}

Matrix solve_kkt_oracle(const MergeProblem& problem) {
  problem.validate();
  const std::size_t o = problem.w0.rows();
  const std::size_t d = problem.w0.cols();
  const std::size_t s = problem.target_features.rows();
  const Regularizer reg = regularizer(problem);
  const Matrix& g = reg.gram;
  const Matrix& c = problem.target_features;
  const Matrix v = build_targets(problem);

  // [G  −Cᵀ] [Wᵀ]   [G·W0ᵀ]
  // [C   0 ] [Λ ] = [Vᵀ   ]
  Matrix kkt(d + s, d + s);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) kkt(i, j) = g(i, j);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t k = 0; k < d; ++k) {
      kkt(k, d + r) = -c(r, k);
      kkt(d + r, k) = c(r, k);
    }
  }
  Matrix rhs(d + s, o);
  const Matrix gw0 = matmul_nt(g, problem.w0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < o; ++j) rhs(i, j) = gw0(i, j);
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t j = 0; j < o; ++j) rhs(d + r, j) = v(j, r);

  Matrix sol;
  try {
    sol = linalg::solve_linear(kkt, rhs);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularMatrix) throw;
    fail(ErrorCode::SingularTargetSystem, "merge oracle: KKT system is singular; deduplicate the target rows");
  }
  return sol.row_slice(0, d).transposed();
}

const std::set<std::string>& merge_stopwords() {
  static const std::set<std::string> words{"photo", "of", "a", "an", "the", "and", "with",
                                           "picture", "image", "in", "on"};
  return words;
}

MergedModel merge_model(const Pipeline& base, std::span<const DeltaCheckpoint> deltas,
                        std::span<const std::vector<std::string>> captions,
                        std::span<const std::string> reg_captions) {
  if (deltas.empty()) fail(ErrorCode::InvalidInput, "merge_model: no deltas");
  if (captions.size() != deltas.size()) fail(ErrorCode::InvalidInput, "merge_model: one caption list per delta required");
  if (reg_captions.empty()) fail(ErrorCode::InvalidInput, "merge_model: no regularization captions");

  MergedModel out{base, {}};
  Pipeline& merged = out.model;
  // Separately trained deltas may share a rare row; place_modifier moves clashes.
  std::vector<std::vector<ModifierToken>> placed(deltas.size());
  for (std::size_t n = 0; n < deltas.size(); ++n) {
    for (const auto& m : deltas[n].modifiers) {
      if (merged.find_modifier(m.surface)) fail(ErrorCode::InvalidInput, "merge_model: modifier '" + m.surface + "' appears in two deltas");
      placed[n].push_back(place_modifier(merged.vocab, m));
      merged.modifiers.push_back(placed[n].back());
    }
  }

  // Target token rows per concept, each embedded with that concept's vocabulary.
  std::vector<std::pair<std::size_t, std::vector<double>>> target_rows;  // owner, feature
  std::map<std::size_t, std::size_t> owner_of_token;
  for (std::size_t n = 0; n < deltas.size(); ++n) {
    Vocabulary vocab = base.vocab;
    for (const auto& m : placed[n]) install_modifier(vocab, m);
    for (const auto& caption : captions[n]) {
      for (const auto& word : split_words(caption)) {
        if (merge_stopwords().count(word)) continue;
        const auto idx = vocab.lookup(word);
        if (!idx) fail(ErrorCode::UnknownToken, "merge_model: unknown token '" + word + "'");
        auto [it, inserted] = owner_of_token.emplace(*idx, n);
        if (!inserted) {
          if (it->second != n) {
            fail(ErrorCode::InvalidInput, "merge_model: target word '" + word + "' belongs to concepts " +
                                              std::to_string(it->second) + " and " + std::to_string(n));
          }
          continue;
        }
        const auto row = vocab.embedding(*idx);
        target_rows.emplace_back(n, std::vector<double>(row.begin(), row.end()));
      }
    }
  }
  if (target_rows.empty()) fail(ErrorCode::InvalidInput, "merge_model: captions contain no target words");

  const std::size_t dim = base.vocab.dim();
  MergeProblem problem;
  problem.target_features = Matrix(target_rows.size(), dim);
  for (std::size_t r = 0; r < target_rows.size(); ++r) {
    problem.owners.push_back(target_rows[r].first);
    std::copy(target_rows[r].second.begin(), target_rows[r].second.end(), problem.target_features.row(r).begin());
  }
  std::vector<double> reg;
  std::size_t reg_rows = 0;
  for (const auto& caption : reg_captions) {
    for (std::size_t idx : tokenize(base.vocab, caption)) {
      const auto row = base.vocab.embedding(idx);
      reg.insert(reg.end(), row.begin(), row.end());
      ++reg_rows;
    }
  }
  problem.reg_features = Matrix(reg_rows, dim, std::move(reg));

  for (auto& entry : merged.net.params().entries()) {
    if (!is_kv(entry.role)) continue;
    problem.w0 = base.net.params().at(entry.name);
    problem.concept_weights.clear();
    for (const auto& delta : deltas) {
      const DeltaEntry* e = delta.find(entry.name);
      problem.concept_weights.push_back(e ? problem.w0 + e->reconstruct() : problem.w0);
    }
    MergeSolution sol;
    try {
      sol = solve_closed_form(problem);
    } catch (const Error& e) {
      fail(e.code(), "merge_model: " + entry.name + ": " + e.what());
    }
    entry.value = sol.w_hat;
    out.layers.push_back({entry.name, problem.target_features.rows(), sol.constraint_residual,
                          sol.objective_value, sol.conditioning, sol.ridge});
  }
  return out;
}

}  // namespace cdiff
