// SPDX-License-Identifier: Apache-2.0
#include "customdiff/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "customdiff/diffusion.hpp"
#include "customdiff/error.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

// ---------------------------------------------------------------------------
// Roles and registry

const char* role_name(Role role) {
  switch (role) {
    case Role::CrossKey: return "cross_kv_key";
    case Role::CrossValue: return "cross_kv_value";
    case Role::CrossQuery: return "cross_query";
    case Role::CrossOut: return "cross_out";
    case Role::SelfAttn: return "self_attn";
    case Role::Other: return "other";
  }
  return "other";
}

std::optional<Role> role_from_name(std::string_view name) {
  for (Role r : {Role::CrossKey, Role::CrossValue, Role::CrossQuery, Role::CrossOut,
                 Role::SelfAttn, Role::Other}) {
    if (name == role_name(r)) return r;
  }
  return std::nullopt;
}

RoleGroup group_of(Role role) {
  switch (role) {
    case Role::CrossKey:
    case Role::CrossValue:
    case Role::CrossQuery:
    case Role::CrossOut: return RoleGroup::CrossAttention;
    case Role::SelfAttn: return RoleGroup::SelfAttention;
    case Role::Other: return RoleGroup::Other;
  }
  return RoleGroup::Other;
}

const char* group_name(RoleGroup group) {
  switch (group) {
    case RoleGroup::CrossAttention: return "cross_attention";
    case RoleGroup::SelfAttention: return "self_attention";
    case RoleGroup::Other: return "other";
  }
  return "other";
}

void ParamRegistry::add(std::string name, std::size_t layer, Role role, Matrix value) {
  if (index_.contains(name)) fail(ErrorCode::InvalidInput, "duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), layer, role, std::move(value)});
}

std::size_t ParamRegistry::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

const ParamEntry* ParamRegistry::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

ParamEntry* ParamRegistry::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

const Matrix& ParamRegistry::at(std::string_view name) const {
  const ParamEntry* e = find(name);
  if (!e) fail(ErrorCode::InvalidInput, "unknown parameter '" + std::string(name) + "'");
  return e->value;
}

Matrix& ParamRegistry::at(std::string_view name) {
  ParamEntry* e = find(name);
  if (!e) fail(ErrorCode::InvalidInput, "unknown parameter '" + std::string(name) + "'");
  return e->value;
}

ParamRegistry ParamRegistry::zeros_like() const {
  ParamRegistry out;
  for (const auto& e : entries_) out.add(e.name, e.layer, e.role, Matrix(e.value.rows(), e.value.cols()));
  return out;
}

bool ParamRegistry::same_structure(const ParamRegistry& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& a = entries_[i];
    const auto& b = other.entries_[i];
    if (a.name != b.name || a.layer != b.layer || a.role != b.role || !a.value.same_shape(b.value)) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Construction

void ModelDims::validate() const {
  if (image_size == 0 || patch == 0 || image_size % patch != 0) {
    fail(ErrorCode::InvalidInput, "model: image_size must be a positive multiple of patch");
  }
  if (hidden == 0 || hidden % 2 != 0) fail(ErrorCode::InvalidInput, "model: hidden must be even and positive");
  if (text_dim == 0 || attn_dim == 0 || mlp == 0) fail(ErrorCode::InvalidInput, "model: zero dimension");
  if (blocks == 0) fail(ErrorCode::InvalidInput, "model: at least one block required");
}

namespace {

std::string block_name(std::size_t layer, const char* suffix) {
  return "block" + std::to_string(layer) + "." + suffix;
}

ParamRegistry build_registry(const ModelDims& d, Rng* rng) {
  d.validate();
  const std::size_t F = d.hidden, A = d.attn_dim, T = d.text_dim, M = d.mlp, P = d.patches(),
                    PD = d.patch_dim();
  ParamRegistry reg;
  // Weights drawn N(0, 1/fan_in); the trailing column of biased layers is the bias.
  auto weight = [&](std::size_t rows, std::size_t fan_in, bool bias) {
    Matrix m(rows, fan_in + (bias ? 1 : 0));
    if (!rng) return m;
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < fan_in; ++j) m(i, j) = dist(*rng);
    return m;
  };
  reg.add("input", 0, Role::Other, weight(F, PD, true));
  reg.add("pos", 0, Role::Other, weight(P, F, false));
  reg.add("time", 0, Role::Other, weight(F, F, true));
  for (std::size_t l = 1; l <= d.blocks; ++l) {
    reg.add(block_name(l, "self.q"), l, Role::SelfAttn, weight(A, F, false));
    reg.add(block_name(l, "self.k"), l, Role::SelfAttn, weight(A, F, false));
    reg.add(block_name(l, "self.v"), l, Role::SelfAttn, weight(A, F, false));
    reg.add(block_name(l, "self.o"), l, Role::SelfAttn, weight(F, A, false));
    reg.add(block_name(l, "cross.q"), l, Role::CrossQuery, weight(A, F, false));
    reg.add(block_name(l, "cross.k"), l, Role::CrossKey, weight(A, T, false));
    reg.add(block_name(l, "cross.v"), l, Role::CrossValue, weight(A, T, false));
    reg.add(block_name(l, "cross.o"), l, Role::CrossOut, weight(F, A, false));
    reg.add(block_name(l, "mlp.fc1"), l, Role::Other, weight(M, F, true));
    reg.add(block_name(l, "mlp.fc2"), l, Role::Other, weight(F, M, true));
  }
  reg.add("output", 0, Role::Other, Matrix(PD, F + 1));
  return reg;
}

}  // namespace

DenoiserNet::DenoiserNet(ModelDims dims, ParamRegistry params)
    : dims_(dims), params_(std::move(params)) {}

DenoiserNet DenoiserNet::create(const ModelDims& dims, std::uint64_t seed) {
  Rng rng(seed);
  return DenoiserNet(dims, build_registry(dims, &rng));
}

DenoiserNet DenoiserNet::zeros(const ModelDims& dims) {
  return DenoiserNet(dims, build_registry(dims, nullptr));
}

std::string DenoiserNet::cross_key_name(std::size_t layer) { return block_name(layer, "cross.k"); }
std::string DenoiserNet::cross_value_name(std::size_t layer) { return block_name(layer, "cross.v"); }

// ---------------------------------------------------------------------------
// Primitive layers

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
inline double silu(double z) { return z * sigmoid(z); }
inline double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

// y = x·W[:, :in]ᵀ + W[:, in]
Matrix linear(const Matrix& x, const Matrix& wb) {
  const std::size_t in = wb.cols() - 1;
  if (x.cols() != in) fail(ErrorCode::InvalidInput, "linear: input width mismatch");
  Matrix y(x.rows(), wb.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i).data();
    for (std::size_t o = 0; o < wb.rows(); ++o) {
      const double* w = wb.row(o).data();
      double s = w[in];
      for (std::size_t j = 0; j < in; ++j) s += xr[j] * w[j];
      y(i, o) = s;
    }
  }
  return y;
}

// dwb += dyᵀ·[x, 1]; dx = dy·W[:, :in] when requested.
void linear_backward(const Matrix& x, const Matrix& wb, const Matrix& dy, Matrix& dwb, Matrix* dx) {
  const std::size_t in = wb.cols() - 1;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i).data();
    for (std::size_t o = 0; o < wb.rows(); ++o) {
      const double g = dy(i, o);
      if (g == 0.0) continue;
      double* dw = dwb.row(o).data();
      for (std::size_t j = 0; j < in; ++j) dw[j] += g * xr[j];
      dw[in] += g;
    }
  }
  if (dx) {
    *dx = Matrix(x.rows(), in);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double* dxr = dx->row(i).data();
      for (std::size_t o = 0; o < wb.rows(); ++o) {
        const double g = dy(i, o);
        if (g == 0.0) continue;
        const double* w = wb.row(o).data();
        for (std::size_t j = 0; j < in; ++j) dxr[j] += g * w[j];
      }
    }
  }
}

struct AttnCache {
  Matrix q, k, v, a, o;
};

Matrix attend(const Matrix& xq, const Matrix& xkv, const Matrix& wq, const Matrix& wk,
              const Matrix& wv, AttnCache& cache) {
  if (wq.cols() != xq.cols() || wk.cols() != xkv.cols() || wv.cols() != xkv.cols() ||
      wq.rows() != wk.rows()) {
    fail(ErrorCode::InvalidInput, "attention: projection dimensions are incompatible");
  }
  cache.q = matmul_nt(xq, wq);
  cache.k = matmul_nt(xkv, wk);
  cache.v = matmul_nt(xkv, wv);
  Matrix logits = matmul_nt(cache.q, cache.k);
  logits *= 1.0 / std::sqrt(static_cast<double>(wq.rows()));
  cache.a = softmax_rows(logits);
  cache.o = matmul(cache.a, cache.v);
  return cache.o;
}

void attend_backward(const Matrix& xq, const Matrix& xkv, const Matrix& wq, const Matrix& wk,
                     const Matrix& wv, const AttnCache& c, const Matrix& d_out, Matrix& dwq,
                     Matrix& dwk, Matrix& dwv, Matrix& dxq, Matrix& dxkv) {
  const Matrix da = matmul_nt(d_out, c.v);
  const Matrix dv = matmul_tn(c.a, d_out);
  Matrix ds(da.rows(), da.cols());
  const double inv = 1.0 / std::sqrt(static_cast<double>(wq.rows()));
  for (std::size_t i = 0; i < da.rows(); ++i) {
    const double r = dot(da.row(i), c.a.row(i));
    for (std::size_t j = 0; j < da.cols(); ++j) ds(i, j) = c.a(i, j) * (da(i, j) - r) * inv;
  }
  const Matrix dq = matmul(ds, c.k);
  const Matrix dk = matmul_tn(ds, c.q);
  dwq += matmul_tn(dq, xq);
  dwk += matmul_tn(dk, xkv);
  dwv += matmul_tn(dv, xkv);
  dxq = matmul(dq, wq);
  dxkv = matmul(dk, wk);
  dxkv += matmul(dv, wv);
}

struct BlockCache {
  Matrix h_in;
  AttnCache self;
  Matrix h_mid;
  AttnCache cross;
  Matrix h_post;
  Matrix z;
  Matrix g;
};

struct ForwardCache {
  Matrix xp;
  Matrix emb;
  Matrix temb_pre;
  std::vector<BlockCache> blocks;
  Matrix h_final;
};

// Per-block parameter handles, resolved once per pass.
struct BlockParams {
  const Matrix *sq, *sk, *sv, *so, *cq, *ck, *cv, *co, *fc1, *fc2;
};

BlockParams block_params(const ParamRegistry& p, std::size_t l) {
  return {&p.at(block_name(l, "self.q")),  &p.at(block_name(l, "self.k")),
          &p.at(block_name(l, "self.v")),  &p.at(block_name(l, "self.o")),
          &p.at(block_name(l, "cross.q")), &p.at(block_name(l, "cross.k")),
          &p.at(block_name(l, "cross.v")), &p.at(block_name(l, "cross.o")),
          &p.at(block_name(l, "mlp.fc1")), &p.at(block_name(l, "mlp.fc2"))};
}

struct BlockGrads {
  Matrix *sq, *sk, *sv, *so, *cq, *ck, *cv, *co, *fc1, *fc2;
};

BlockGrads block_grads(ParamRegistry& p, std::size_t l) {
  return {&p.at(block_name(l, "self.q")),  &p.at(block_name(l, "self.k")),
          &p.at(block_name(l, "self.v")),  &p.at(block_name(l, "self.o")),
          &p.at(block_name(l, "cross.q")), &p.at(block_name(l, "cross.k")),
          &p.at(block_name(l, "cross.v")), &p.at(block_name(l, "cross.o")),
          &p.at(block_name(l, "mlp.fc1")), &p.at(block_name(l, "mlp.fc2"))};
}

Matrix forward(const DenoiserNet& model, const Matrix& x_t, std::size_t t, const Matrix& c,
               ForwardCache& cache, std::vector<AttentionTrace>* traces) {
  const ModelDims& d = model.dims();
  const ParamRegistry& p = model.params();
  if (x_t.rows() != d.image_size || x_t.cols() != d.image_size) {
    fail(ErrorCode::InvalidInput, "predict_eps: image must be " + std::to_string(d.image_size) + "x" +
                                      std::to_string(d.image_size));
  }
  if (c.cols() != d.text_dim || c.rows() == 0) {
    fail(ErrorCode::InvalidInput, "predict_eps: caption features must be s x " + std::to_string(d.text_dim));
  }

  cache.xp = patchify(x_t, d.patch);
  cache.emb = timestep_embedding(t, d.hidden);
  cache.temb_pre = linear(cache.emb, p.at("time"));
  Matrix h = linear(cache.xp, p.at("input"));
  h += p.at("pos");
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = 0; j < h.cols(); ++j) h(i, j) += silu(cache.temb_pre(0, j));

  cache.blocks.assign(d.blocks, BlockCache{});
  for (std::size_t l = 1; l <= d.blocks; ++l) {
    BlockCache& bc = cache.blocks[l - 1];
    const BlockParams bp = block_params(p, l);
    bc.h_in = h;
    h += matmul_nt(attend(bc.h_in, bc.h_in, *bp.sq, *bp.sk, *bp.sv, bc.self), *bp.so);
    bc.h_mid = h;
    h += matmul_nt(attend(bc.h_mid, c, *bp.cq, *bp.ck, *bp.cv, bc.cross), *bp.co);
    if (traces) traces->push_back(AttentionTrace{bc.cross.a, l, t});
    bc.h_post = h;
    bc.z = linear(h, *bp.fc1);
    bc.g = bc.z;
    for (double& v : bc.g.data()) v = silu(v);
    h += linear(bc.g, *bp.fc2);
  }
  cache.h_final = h;
  return unpatchify(linear(h, p.at("output")), d.image_size, d.patch);
}

}  // namespace

// ---------------------------------------------------------------------------
// Public operations

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const double m = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      out(i, j) = std::exp(row[j] - m);
      s += out(i, j);
    }
    for (std::size_t j = 0; j < row.size(); ++j) out(i, j) /= s;
  }
  return out;
}

AttentionResult cross_attention(const Matrix& f, const Matrix& c, const Matrix& wq,
                                const Matrix& wk, const Matrix& wv) {
  if (wv.cols() != c.cols()) fail(ErrorCode::InvalidInput, "cross_attention: value projection mismatch");
  AttnCache cache;
  Matrix out = attend(f, c, wq, wk, wv, cache);
  return AttentionResult{std::move(out), AttentionTrace{std::move(cache.a), 0, 0}};
}

Matrix predict_eps(const DenoiserNet& model, const Matrix& x_t, std::size_t t, const Matrix& c,
                   std::vector<AttentionTrace>* traces) {
  ForwardCache cache;
  return forward(model, x_t, t, c, cache, traces);
}

Matrix mean_attention_map(const std::vector<AttentionTrace>& traces, std::size_t token_index) {
  if (traces.empty()) fail(ErrorCode::InvalidInput, "mean_attention_map: no traces");
  const std::size_t rows = traces.front().weights.rows();
  const auto grid = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(rows))));
  if (grid * grid != rows) fail(ErrorCode::InvalidInput, "mean_attention_map: locations are not a square grid");
  Matrix map(grid, grid);
  for (const auto& tr : traces) {
    if (tr.weights.rows() != rows || tr.weights.cols() != traces.front().weights.cols()) {
      fail(ErrorCode::InvalidInput, "mean_attention_map: inconsistent trace shapes");
    }
    if (token_index >= tr.weights.cols()) fail(ErrorCode::InvalidInput, "mean_attention_map: token out of range");
    for (std::size_t i = 0; i < rows; ++i) map[i] += tr.weights(i, token_index);
  }
  map *= 1.0 / static_cast<double>(traces.size());
  return map;
}

double accumulate_gradients(const DenoiserNet& model, const Matrix& x_t, std::size_t t,
                            const Matrix& c, const Matrix& eps, const Matrix& mask, double w_t,
                            double weight, Gradients& acc) {
  const ModelDims& d = model.dims();
  const ParamRegistry& p = model.params();
  ForwardCache cache;
  const Matrix pred = forward(model, x_t, t, c, cache, nullptr);
  Matrix dpred;
  const double loss = masked_loss(eps, pred, mask, w_t, &dpred);
  dpred *= weight;

  ParamRegistry& g = acc.params;
  acc.text = Matrix(c.rows(), c.cols());

  const Matrix dy = patchify(dpred, d.patch);
  Matrix dh;
  linear_backward(cache.h_final, p.at("output"), dy, g.at("output"), &dh);

  for (std::size_t l = d.blocks; l >= 1; --l) {
    const BlockCache& bc = cache.blocks[l - 1];
    const BlockParams bp = block_params(p, l);
    const BlockGrads bg = block_grads(g, l);

    // MLP residual.
    Matrix dgate;
    linear_backward(bc.g, *bp.fc2, dh, *bg.fc2, &dgate);
    for (std::size_t i = 0; i < dgate.size(); ++i) dgate[i] *= silu_grad(bc.z[i]);
    Matrix dx;
    linear_backward(bc.h_post, *bp.fc1, dgate, *bg.fc1, &dx);
    dh += dx;

    // Cross-attention residual.
    *bg.co += matmul_tn(dh, bc.cross.o);
    {
      const Matrix d_o = matmul(dh, *bp.co);
      Matrix dxq, dxkv;
      attend_backward(bc.h_mid, c, *bp.cq, *bp.ck, *bp.cv, bc.cross, d_o, *bg.cq, *bg.ck, *bg.cv,
                      dxq, dxkv);
      dh += dxq;
      acc.text += dxkv;
    }

    // Self-attention residual.
    *bg.so += matmul_tn(dh, bc.self.o);
    {
      const Matrix d_o = matmul(dh, *bp.so);
      Matrix dxq, dxkv;
      attend_backward(bc.h_in, bc.h_in, *bp.sq, *bp.sk, *bp.sv, bc.self, d_o, *bg.sq, *bg.sk,
                      *bg.sv, dxq, dxkv);
      dh += dxq;
      dh += dxkv;
    }
  }

  g.at("pos") += dh;
  linear_backward(cache.xp, p.at("input"), dh, g.at("input"), nullptr);
  Matrix dtemb(1, d.hidden);
  for (std::size_t i = 0; i < dh.rows(); ++i)
    for (std::size_t j = 0; j < dh.cols(); ++j) dtemb(0, j) += dh(i, j);
  for (std::size_t j = 0; j < d.hidden; ++j) dtemb(0, j) *= silu_grad(cache.temb_pre(0, j));
  linear_backward(cache.emb, p.at("time"), dtemb, g.at("time"), nullptr);
  return loss;
}

Matrix patchify(const Matrix& image, std::size_t patch) {
  const std::size_t grid = image.rows() / patch;
  Matrix out(grid * grid, patch * patch);
  for (std::size_t gi = 0; gi < grid; ++gi)
    for (std::size_t gj = 0; gj < grid; ++gj)
      for (std::size_t di = 0; di < patch; ++di)
        for (std::size_t dj = 0; dj < patch; ++dj)
          out(gi * grid + gj, di * patch + dj) = image(gi * patch + di, gj * patch + dj);
  return out;
}

Matrix unpatchify(const Matrix& patches, std::size_t image_size, std::size_t patch) {
  const std::size_t grid = image_size / patch;
  Matrix out(image_size, image_size);
  for (std::size_t gi = 0; gi < grid; ++gi)
    for (std::size_t gj = 0; gj < grid; ++gj)
      for (std::size_t di = 0; di < patch; ++di)
        for (std::size_t dj = 0; dj < patch; ++dj)
          out(gi * patch + di, gj * patch + dj) = patches(gi * grid + gj, di * patch + dj);
  return out;
}

Matrix timestep_embedding(std::size_t t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Matrix e(1, dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    const double arg = static_cast<double>(t) * freq;
    e(0, k) = std::sin(arg);
    e(0, half + k) = std::cos(arg);
  }
  return e;
}

}  // namespace cdiff
