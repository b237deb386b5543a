// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "customdiff/denoiser.hpp"
#include "customdiff/pipeline.hpp"

namespace cdiff {

/// Difference W' − W0 of one K/V projection, stored dense or as truncated
/// SVD factors.
struct DeltaEntry {
  std::string name;
  std::size_t layer = 0;
  Role role = Role::CrossKey;
  bool factored = false;
  Matrix dense;                // o×d when !factored
  Matrix u;                    // o×r
  std::vector<double> sigma;   // r
  Matrix vt;                   // r×d
  std::size_t rows = 0, cols = 0;
  /// Frobenius norm of the part discarded by truncation (0 when dense).
  double residual = 0.0;

  std::size_t rank() const { return sigma.size(); }
  Matrix reconstruct() const;
};

/// Everything a K/V fine-tune changes relative to its base: the projection
/// deltas and the trained modifier embeddings.
struct DeltaCheckpoint {
  std::vector<DeltaEntry> entries;
  std::vector<ModifierToken> modifiers;
  double energy_kept = 1.0;

  const DeltaEntry* find(std::string_view name) const;
};

/// Dense K/V deltas of `tuned` against `base`. Each delta is nudged by at
/// most a few ulps so that base + delta reproduces tuned bit for bit.
/// InvalidInput if anything outside the K/V projections changed.
DeltaCheckpoint extract_delta(const Pipeline& base, const Pipeline& tuned);

/// Base with K/V entries replaced by base + delta and the delta's modifier
/// tokens installed.
Pipeline apply_delta(const Pipeline& base, const DeltaCheckpoint& delta);

/// Keeps, per entry, the smallest rank whose cumulative singular-value sum
/// reaches `energy` of the total. energy = 1 keeps the dense delta.
DeltaCheckpoint compress_delta(const DeltaCheckpoint& delta, double energy);

/// Smallest r with sum(sigma[0..r)) >= energy * sum(sigma).
std::size_t energy_rank(const std::vector<double>& sigma, double energy);

struct EntrySpectrum {
  std::string name;
  std::size_t layer = 0;
  Role role = Role::CrossKey;
  std::vector<double> sigma;  // descending
};

std::vector<EntrySpectrum> spectrum(const DeltaCheckpoint& delta);

struct KeyChange {
  std::string name;
  std::size_t layer = 0;
  Role role = Role::Other;
  double rate = 0.0;
  bool zero_norm = false;
  std::size_t params = 0;
};

struct GroupChange {
  double mean_rate = 0.0;
  double param_fraction = 0.0;
  std::size_t keys = 0;
};

struct ChangeReport {
  std::vector<KeyChange> keys;
  GroupChange cross_attention, self_attention, other;

  const GroupChange& group(RoleGroup g) const;
  std::string to_json_text() const;
};

/// Relative Frobenius change ‖θ' − θ‖ / ‖θ‖ per key. Zero-norm keys report
/// 0, are flagged, and are left out of the group means.
ChangeReport delta_rate(const ParamRegistry& base, const ParamRegistry& tuned);

}  // namespace cdiff
