// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "customdiff/analysis.hpp"
#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"
#include "support.hpp"

using namespace cdiff;

namespace {

// Tiny model plus a tuned copy with random K/V changes and a trained modifier.
std::pair<Pipeline, Pipeline> tuned_pair(std::uint64_t seed) {
  Pipeline base = testing::tiny_model(seed);
  Pipeline tuned = base;
  const auto& mod = tuned.add_modifier("<new1>");
  Rng rng(seed);
  std::vector<double> emb(16, 0.25);
  tuned.vocab.set_embedding(mod.token_index, emb);
  tuned.sync_modifiers();
  for (auto& e : tuned.net.params().entries())
    if (is_kv(e.role)) e.value += gaussian(e.value.rows(), e.value.cols(), rng, 0.05);
  return {base, tuned};
}

}  // namespace

TEST_CASE("energy_rank uses the cumulative sum of singular values") {
  CHECK(energy_rank({4, 3, 2, 1}, 0.6) == 2);
  CHECK(energy_rank({4, 3, 2, 1}, 0.4) == 1);
  CHECK(energy_rank({4, 3, 2, 1}, 0.41) == 2);
  CHECK(energy_rank({4, 3, 2, 1}, 1.0) == 4);
  CHECK(energy_rank({0, 0}, 0.5) == 0);
}

TEST_CASE("extract_delta reproduces the tuned weights bit for bit") {
  auto [base, tuned] = tuned_pair(1);
  const DeltaCheckpoint d = extract_delta(base, tuned);
  CHECK(d.entries.size() == 4);
  REQUIRE(d.modifiers.size() == 1);
  const Pipeline back = apply_delta(base, d);
  for (std::size_t k = 0; k < base.net.params().size(); ++k) {
    CHECK(bit_equal(back.net.params().entries()[k].value, tuned.net.params().entries()[k].value));
  }
  CHECK(back.vocab.embedding(d.modifiers[0].token_index)[0] == 0.25);

  tuned.net.params().at("block1.cross.q")[0] += 1.0;
  CHECK_THROWS_AS(extract_delta(base, tuned), Error);
}

TEST_CASE("compression follows Eckart–Young and is monotone in energy") {
  auto [base, tuned] = tuned_pair(2);
  const DeltaCheckpoint d = extract_delta(base, tuned);
  std::map<std::string, double> previous;
  for (double energy : {0.01, 0.2, 0.6, 1.0}) {
    const DeltaCheckpoint c = compress_delta(d, energy);
    CHECK(c.energy_kept == energy);
    CHECK(c.modifiers.size() == d.modifiers.size());
    for (std::size_t i = 0; i < d.entries.size(); ++i) {
      const DeltaEntry& e = c.entries[i];
      const double err = linalg::frobenius_norm(d.entries[i].dense - e.reconstruct());
      const auto svd = linalg::thin_svd(d.entries[i].dense);
      double dropped = 0.0;
      for (std::size_t r = e.factored ? e.rank() : svd.sigma.size(); r < svd.sigma.size(); ++r) {
        dropped += svd.sigma[r] * svd.sigma[r];
      }
      CHECK(std::abs(err - std::sqrt(dropped)) <= 1e-8);
      CHECK(std::abs(e.residual - std::sqrt(dropped)) <= 1e-8);
      if (previous.count(e.name)) CHECK(err <= previous[e.name] + 1e-12);
      previous[e.name] = err;
      if (energy == 1.0) CHECK(bit_equal(e.reconstruct(), d.entries[i].dense));
    }
  }
  CHECK_THROWS_AS(compress_delta(d, 0.0), Error);
  CHECK_THROWS_AS(compress_delta(d, 1.5), Error);
  CHECK_THROWS_AS(compress_delta(compress_delta(d, 0.5), 0.5), Error);
}

TEST_CASE("spectrum matches thin_svd of each dense entry") {
  auto [base, tuned] = tuned_pair(3);
  const DeltaCheckpoint d = extract_delta(base, tuned);
  const auto spec = spectrum(d);
  REQUIRE(spec.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto svd = linalg::thin_svd(d.entries[i].dense);
    REQUIRE(spec[i].sigma.size() == svd.sigma.size());
    for (std::size_t k = 0; k < svd.sigma.size(); ++k) CHECK(spec[i].sigma[k] == doctest::Approx(svd.sigma[k]).epsilon(1e-12));
  }
}

TEST_CASE("delta_rate per key and per group") {
  const Pipeline base = testing::tiny_model(4);
  Pipeline tuned = base;
  tuned.net.params().at("block1.cross.k") *= 1.5;
  tuned.net.params().at("block2.mlp.fc1") *= 0.9;
  tuned.net.params().at("output")[0] = 1.0;  // zero-norm in the base
  const ChangeReport r = delta_rate(base.net.params(), tuned.net.params());
  for (const auto& k : r.keys) {
    const Matrix& b = base.net.params().at(k.name);
    const Matrix& t = tuned.net.params().at(k.name);
    const double bn = linalg::frobenius_norm(b);
    if (bn == 0.0) {
      CHECK(k.zero_norm);
      CHECK(k.rate == 0.0);
    } else {
      CHECK(k.rate == doctest::Approx(linalg::frobenius_norm(t - b) / bn));
    }
  }
  const auto& cross = r.group(RoleGroup::CrossAttention);
  CHECK(cross.keys == 8);
  CHECK(cross.mean_rate == doctest::Approx(0.5 / 8.0));
  // "output" is excluded from the mean, fc1 is not.
  CHECK(r.other.mean_rate == doctest::Approx(0.1 / static_cast<double>(r.other.keys)));
  CHECK(r.cross_attention.param_fraction + r.self_attention.param_fraction + r.other.param_fraction ==
        doctest::Approx(1.0));
  const auto j = nlohmann::json::parse(r.to_json_text());
  CHECK(j.contains("keys"));

  Pipeline other = testing::tiny_model(4);
  other.net.params().entries().pop_back();
  CHECK_THROWS_AS(delta_rate(base.net.params(), other.net.params()), Error);
}
