// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "customdiff/analysis.hpp"
#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"
#include "customdiff/merge.hpp"
#include "support.hpp"

using namespace cdiff;

namespace {

MergeProblem random_problem(std::uint64_t seed, std::size_t o, std::size_t d, std::size_t s,
                            std::size_t s_reg, std::size_t n_concepts = 2) {
  Rng rng(seed);
  MergeProblem p;
  p.w0 = gaussian(o, d, rng);
  for (std::size_t n = 0; n < n_concepts; ++n) p.concept_weights.push_back(p.w0 + gaussian(o, d, rng, 0.3));
  p.target_features = gaussian(s, d, rng);
  for (std::size_t j = 0; j < s; ++j) p.owners.push_back(j % n_concepts);
  p.reg_features = gaussian(s_reg, d, rng);
  return p;
}

// I − Cᵀ(CCᵀ)⁻¹C.
Matrix null_projector(const Matrix& c) {
  const Matrix inv = linalg::inverse(matmul_nt(c, c));
  return Matrix::identity(c.cols()) - matmul_tn(c, matmul(inv, c));
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("build_targets uses each column's owner") {
  const MergeProblem p = random_problem(1, 3, 4, 3, 16);
  const Matrix v = build_targets(p);
  REQUIRE(v.rows() == 3);
  REQUIRE(v.cols() == 3);
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 4; ++k) s += p.concept_weights[p.owners[j]](i, k) * p.target_features(j, k);
      CHECK(v(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("closed form matches the KKT oracle on a small instance") {
  const MergeProblem p = random_problem(2, 2, 3, 2, 6);
  const auto sol = solve_closed_form(p);
  const Matrix kkt = solve_kkt_oracle(p);
  CHECK(linalg::frobenius_norm(sol.w_hat - kkt) / std::max(1.0, linalg::frobenius_norm(kkt)) <= 1e-6);
  CHECK(sol.constraint_residual <= 1e-8 * std::max(1.0, linalg::frobenius_norm(build_targets(p))));
  CHECK(sol.objective_value == doctest::Approx(merge_objective(p, sol.w_hat)));
  CHECK(sol.ridge == 0.0);
}

TEST_CASE("full-rank targets force W = V (Cᵀ)⁻¹") {
  MergeProblem p = random_problem(3, 4, 3, 3, 12, 1);
  const Matrix v = build_targets(p);
  const Matrix direct = matmul(v, linalg::inverse(p.target_features.transposed()));
  CHECK(max_abs_diff(solve_closed_form(p).w_hat, direct) <= 1e-8);
  // Same answer whatever the regularizer.
  Rng other(99);
  p.reg_features = gaussian(12, 3, other);
  CHECK(max_abs_diff(solve_closed_form(p).w_hat, direct) <= 1e-8);
}

TEST_CASE("one constraint with identity Gram replaces a single column") {
  MergeProblem p;
  Rng rng(4);
  p.w0 = gaussian(3, 4, rng);
  p.reg_features = Matrix::identity(4);
  p.target_features = Matrix(1, 4);
  p.target_features(0, 2) = 1.0;
  Matrix wn = p.w0;
  for (std::size_t i = 0; i < 3; ++i) wn(i, 2) = static_cast<double>(i) - 5.0;
  p.concept_weights = {wn};
  p.owners = {0};
  const Matrix w = solve_closed_form(p).w_hat;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(w(i, k) == doctest::Approx(k == 2 ? wn(i, 2) : p.w0(i, k)));
}

TEST_CASE("closed form beats random feasible perturbations") {
  const MergeProblem p = random_problem(5, 8, 16, 4, 64);
  const auto sol = solve_closed_form(p);
  const Matrix proj = null_projector(p.target_features);
  Rng rng(6);
  for (int k = 0; k < 100; ++k) {
    const Matrix w = sol.w_hat + matmul(gaussian(8, 16, rng, 0.1), proj);
    CHECK(merge_constraint_residual(p, w) <= 1e-8 * std::max(1.0, linalg::frobenius_norm(build_targets(p))));
    CHECK(sol.objective_value <= merge_objective(p, w) + 1e-9);
  }
}

TEST_CASE("merge solver errors") {
  MergeProblem p = random_problem(7, 2, 4, 2, 3);  // s_reg < d
  CHECK(code_of([&] { solve_closed_form(p); }) == ErrorCode::DegenerateRegularization);
  p.reg_features = Matrix(8, 4);
  CHECK(code_of([&] { solve_closed_form(p); }) == ErrorCode::DegenerateRegularization);

  MergeProblem q = random_problem(8, 2, 4, 2, 16);
  for (std::size_t k = 0; k < 4; ++k) q.target_features(1, k) = 2.0 * q.target_features(0, k);
  CHECK(code_of([&] { solve_closed_form(q); }) == ErrorCode::SingularTargetSystem);
  CHECK(code_of([&] { solve_kkt_oracle(q); }) == ErrorCode::SingularTargetSystem);

  MergeProblem r = random_problem(9, 2, 4, 2, 16);
  r.owners[0] = 5;
  CHECK(code_of([&] { r.validate(); }) == ErrorCode::InvalidInput);
}

TEST_CASE("a rank-deficient regularizer gets a ridge") {
  MergeProblem p = random_problem(10, 3, 4, 2, 16);
  for (std::size_t i = 0; i < 16; ++i) p.reg_features(i, 3) = p.reg_features(i, 0);
  const auto sol = solve_closed_form(p);
  CHECK(sol.ridge > 0.0);
  CHECK(sol.constraint_residual <= 1e-8 * std::max(1.0, linalg::frobenius_norm(build_targets(p))));
}

TEST_CASE("merging zero deltas returns the base bit for bit") {
  const Pipeline base = testing::tiny_model();
  Pipeline tuned = base;
  tuned.add_modifier("<new1>");
  DeltaCheckpoint zero = extract_delta(base, tuned);
  std::vector<DeltaCheckpoint> deltas{zero};
  const std::vector<std::vector<std::string>> captions{{"photo of a <new1> dog"}};
  const auto merged = merge_model(base, deltas, captions, toy::regularization_captions(50, 1));
  for (std::size_t k = 0; k < base.net.params().size(); ++k) {
    CHECK(bit_equal(merged.model.net.params().entries()[k].value, base.net.params().entries()[k].value));
  }
}

TEST_CASE("merging a genuine delta satisfies every layer's constraints") {
  const Pipeline base = testing::tiny_model();
  Pipeline tuned = base;
  const auto& mod = tuned.add_modifier("<new1>");
  Rng rng(3);
  std::vector<double> emb(16);
  for (double& v : emb) v = std::normal_distribution<double>()(rng);
  tuned.vocab.set_embedding(mod.token_index, emb);
  tuned.sync_modifiers();
  for (auto& e : tuned.net.params().entries())
    if (is_kv(e.role)) e.value += gaussian(e.value.rows(), e.value.cols(), rng, 0.1);
  const DeltaCheckpoint delta = extract_delta(base, tuned);
  std::vector<DeltaCheckpoint> deltas{delta};
  const std::vector<std::vector<std::string>> captions{{"photo of a <new1> dog"}};
  const auto merged = merge_model(base, deltas, captions, toy::regularization_captions(100, 2));
  REQUIRE(merged.layers.size() == 4);
  for (const auto& l : merged.layers) {
    INFO(l.name);
    CHECK(l.targets == 2);
    CHECK(l.constraint_residual <= 1e-8);
  }
  // The target words map exactly as in the tuned model.
  const Matrix c = encode_caption(tuned.vocab, tokenize(tuned.vocab, "<new1> dog"));
  for (const auto& name : {"block1.cross.k", "block2.cross.v"}) {
    const Matrix a = matmul_nt(merged.model.net.params().at(name), c.row_slice(1, 2));
    const Matrix b = matmul_nt(tuned.net.params().at(name), c.row_slice(1, 2));
    CHECK(max_abs_diff(a, b) < 1e-9);
  }
  // Target words shared between concepts are rejected.
  std::vector<DeltaCheckpoint> two{delta, delta};
  two[1].modifiers[0].surface = "<new2>";
  const std::vector<std::vector<std::string>> clash{{"photo of a <new1> dog"}, {"photo of a <new2> dog"}};
  CHECK(code_of([&] { merge_model(base, two, clash, toy::regularization_captions(100, 2)); }) ==
        ErrorCode::InvalidInput);
}
