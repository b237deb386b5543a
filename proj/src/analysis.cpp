// SPDX-License-Identifier: Apache-2.0
#include "customdiff/analysis.hpp"

#include <cmath>

#include <json.hpp>

#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"

namespace cdiff {

namespace {

// Smallest adjustment of fl(t - b) such that fl(b + d) == t, when one
// exists within a few ulps.
double exact_difference(double b, double t) {
  double d = t - b;
  for (int i = 0; i < 8 && b + d != t; ++i) {
    d = std::nextafter(d, b + d < t ? INFINITY : -INFINITY);
  }
  return d;
}

void check_same_structure(const ParamRegistry& a, const ParamRegistry& b, const char* what) {
  if (!a.same_structure(b)) fail(ErrorCode::InvalidInput, std::string(what) + ": parameter names or shapes differ");
}

}  // namespace

Matrix DeltaEntry::reconstruct() const {
  if (!factored) return dense;
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < sigma.size(); ++k) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double us = u(i, k) * sigma[k];
      for (std::size_t j = 0; j < cols; ++j) out(i, j) += us * vt(k, j);
    }
  }
  return out;
}

const DeltaEntry* DeltaCheckpoint::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

DeltaCheckpoint extract_delta(const Pipeline& base, const Pipeline& tuned) {
  check_same_structure(base.net.params(), tuned.net.params(), "extract_delta");
  if (!(base.net.dims() == tuned.net.dims())) fail(ErrorCode::InvalidInput, "extract_delta: model dimensions differ");
  DeltaCheckpoint out;
  const auto& be = base.net.params().entries();
  const auto& te = tuned.net.params().entries();
  for (std::size_t k = 0; k < be.size(); ++k) {
    if (!is_kv(be[k].role)) {
      if (!bit_equal(be[k].value, te[k].value)) {
        fail(ErrorCode::InvalidInput, "extract_delta: '" + be[k].name +
                                          "' changed; only K/V fine-tunes can be stored as deltas");
      }
      continue;
    }
    DeltaEntry e;
    e.name = be[k].name;
    e.layer = be[k].layer;
    e.role = be[k].role;
    e.rows = be[k].value.rows();
    e.cols = be[k].value.cols();
    e.dense = Matrix(e.rows, e.cols);
    for (std::size_t i = 0; i < e.dense.size(); ++i) {
      e.dense[i] = exact_difference(be[k].value[i], te[k].value[i]);
    }
    out.entries.push_back(std::move(e));
  }
  out.modifiers = tuned.modifiers;
  return out;
}

Pipeline apply_delta(const Pipeline& base, const DeltaCheckpoint& delta) {
  Pipeline out = base;
  for (const auto& e : delta.entries) {
    ParamEntry* p = out.net.params().find(e.name);
    if (!p || !is_kv(p->role)) fail(ErrorCode::InvalidInput, "apply_delta: '" + e.name + "' is not a K/V projection of the base");
    if (p->value.rows() != e.rows || p->value.cols() != e.cols) {
      fail(ErrorCode::InvalidInput, "apply_delta: shape mismatch for '" + e.name + "'");
    }
    p->value += e.reconstruct();
  }
  for (const auto& m : delta.modifiers) {
    if (m.token_index >= out.vocab.size() || m.embedding.size() != out.vocab.dim()) {
      fail(ErrorCode::InvalidInput, "apply_delta: modifier '" + m.surface + "' does not fit the vocabulary");
    }
    bool found = false;
    for (auto& existing : out.modifiers) {
      if (existing.surface != m.surface) continue;
      if (existing.token_index != m.token_index) {
        fail(ErrorCode::InvalidInput, "apply_delta: modifier '" + m.surface + "' bound to a different token");
      }
      existing.embedding = m.embedding;
      found = true;
    }
    if (!found) {
      out.modifiers.push_back(place_modifier(out.vocab, m));
    } else {
      out.vocab.set_embedding(m.token_index, m.embedding);
    }
  }
  return out;
}

std::size_t energy_rank(const std::vector<double>& sigma, double energy) {
  double total = 0.0;
  for (double s : sigma) total += s;
  if (total == 0.0) return 0;
  double cum = 0.0;
  for (std::size_t r = 0; r < sigma.size(); ++r) {
    cum += sigma[r];
    if (cum >= energy * total) return r + 1;
  }
  return sigma.size();
}

DeltaCheckpoint compress_delta(const DeltaCheckpoint& delta, double energy) {
  if (!(energy > 0.0 && energy <= 1.0)) fail(ErrorCode::InvalidInput, "compress_delta: energy must lie in (0, 1]");
  DeltaCheckpoint out;
  out.modifiers = delta.modifiers;
  out.energy_kept = energy;
  for (const auto& e : delta.entries) {
    if (e.factored) fail(ErrorCode::InvalidInput, "compress_delta: '" + e.name + "' is already factored");
    if (energy == 1.0) {
      out.entries.push_back(e);
      continue;
    }
    const linalg::SvdResult svd = linalg::thin_svd(e.dense);
    const std::size_t r = energy_rank(svd.sigma, energy);
    DeltaEntry c;
    c.name = e.name;
    c.layer = e.layer;
    c.role = e.role;
    c.rows = e.rows;
    c.cols = e.cols;
    c.factored = true;
    c.u = svd.u.col_slice(0, r);
    c.vt = svd.vt.row_slice(0, r);
    c.sigma.assign(svd.sigma.begin(), svd.sigma.begin() + static_cast<std::ptrdiff_t>(r));
    double dropped = 0.0;
    for (std::size_t k = r; k < svd.sigma.size(); ++k) dropped += svd.sigma[k] * svd.sigma[k];
    c.residual = std::sqrt(dropped);
    out.entries.push_back(std::move(c));
  }
  return out;
}

std::vector<EntrySpectrum> spectrum(const DeltaCheckpoint& delta) {
  std::vector<EntrySpectrum> out;
  for (const auto& e : delta.entries) {
    EntrySpectrum s{e.name, e.layer, e.role, {}};
    s.sigma = e.factored ? e.sigma : linalg::thin_svd(e.dense).sigma;
    out.push_back(std::move(s));
  }
  return out;
}

const GroupChange& ChangeReport::group(RoleGroup g) const {
  switch (g) {
    case RoleGroup::CrossAttention: return cross_attention;
    case RoleGroup::SelfAttention: return self_attention;
    case RoleGroup::Other: return other;
  }
  return other;
}

std::string ChangeReport::to_json_text() const {
  nlohmann::json j;
  j["keys"] = nlohmann::json::array();
  for (const auto& k : keys) {
    j["keys"].push_back({{"name", k.name},
                         {"layer", k.layer},
                         {"role", role_name(k.role)},
                         {"group", group_name(group_of(k.role))},
                         {"delta", k.rate},
                         {"zero_norm", k.zero_norm},
                         {"params", k.params}});
  }
  for (RoleGroup g : {RoleGroup::CrossAttention, RoleGroup::SelfAttention, RoleGroup::Other}) {
    const GroupChange& c = group(g);
    j["groups"][group_name(g)] = {{"mean_delta", c.mean_rate},
                                  {"param_fraction", c.param_fraction},
                                  {"keys", c.keys}};
  }
  return j.dump(2);
}

ChangeReport delta_rate(const ParamRegistry& base, const ParamRegistry& tuned) {
  check_same_structure(base, tuned, "delta_rate");
  ChangeReport r;
  std::size_t total = 0;
  std::size_t counted[3] = {0, 0, 0};
  double sums[3] = {0.0, 0.0, 0.0};
  std::size_t params[3] = {0, 0, 0};
  for (std::size_t k = 0; k < base.size(); ++k) {
    const ParamEntry& b = base.entries()[k];
    const ParamEntry& t = tuned.entries()[k];
    KeyChange c{b.name, b.layer, b.role, 0.0, false, b.value.size()};
    const double norm = linalg::frobenius_norm(b.value);
    if (norm == 0.0) {
      c.zero_norm = true;
    } else {
      c.rate = linalg::frobenius_norm(t.value - b.value) / norm;
    }
    const auto g = static_cast<std::size_t>(group_of(b.role));
    if (!c.zero_norm) {
      sums[g] += c.rate;
      ++counted[g];
    }
    params[g] += c.params;
    total += c.params;
    r.keys.push_back(std::move(c));
  }
  GroupChange* groups[3] = {&r.cross_attention, &r.self_attention, &r.other};
  for (std::size_t g = 0; g < 3; ++g) {
    groups[g]->keys = counted[g];
    groups[g]->mean_rate = counted[g] ? sums[g] / static_cast<double>(counted[g]) : 0.0;
    groups[g]->param_fraction = total ? static_cast<double>(params[g]) / static_cast<double>(total) : 0.0;
  }
  return r;
}

}  // namespace cdiff
