// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "customdiff/matrix.hpp"

namespace cdiff {

/// Role of a parameter inside the denoiser. Cross-attention key and value
/// projections are the only entries touched by K/V fine-tuning.
enum class Role { CrossKey, CrossValue, CrossQuery, CrossOut, SelfAttn, Other };

enum class RoleGroup { CrossAttention, SelfAttention, Other };

const char* role_name(Role role);
std::optional<Role> role_from_name(std::string_view name);
RoleGroup group_of(Role role);
const char* group_name(RoleGroup group);
inline bool is_kv(Role role) { return role == Role::CrossKey || role == Role::CrossValue; }

struct ParamEntry {
  std::string name;
  std::size_t layer = 0;  // 0 for stem/head parameters, 1..L for blocks
  Role role = Role::Other;
  Matrix value;
};

/// Ordered collection of named parameters partitioned by role.
class ParamRegistry {
 public:
  void add(std::string name, std::size_t layer, Role role, Matrix value);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::vector<ParamEntry>& entries() noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  std::size_t parameter_count() const;

  const ParamEntry* find(std::string_view name) const;
  ParamEntry* find(std::string_view name);
  const Matrix& at(std::string_view name) const;
  Matrix& at(std::string_view name);

  /// Same names, layers, roles and shapes with zero values.
  ParamRegistry zeros_like() const;
  bool same_structure(const ParamRegistry& other) const;

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Toy ε-predictor geometry. Images are image_size² pixels split into
/// patch×patch tiles; each tile is one spatial token.
struct ModelDims {
  std::size_t image_size = 8;
  std::size_t patch = 2;
  std::size_t hidden = 32;
  std::size_t text_dim = 16;
  std::size_t attn_dim = 16;
  std::size_t mlp = 64;
  std::size_t blocks = 2;

  std::size_t grid() const { return image_size / patch; }
  std::size_t patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return patch * patch; }
  void validate() const;
  bool operator==(const ModelDims&) const = default;
};

/// Residual stack of [self-attention, single-head cross-attention, MLP]
/// blocks over patch tokens, with a sinusoidal timestep embedding.
class DenoiserNet {
 public:
  /// Scaled Gaussian init (std = 1/sqrt(fan_in)); output head zeroed.
  static DenoiserNet create(const ModelDims& dims, std::uint64_t seed);
  static DenoiserNet zeros(const ModelDims& dims);

  const ModelDims& dims() const noexcept { return dims_; }
  const ParamRegistry& params() const noexcept { return params_; }
  ParamRegistry& params() noexcept { return params_; }

  static std::string cross_key_name(std::size_t layer);
  static std::string cross_value_name(std::size_t layer);

 private:
  DenoiserNet(ModelDims dims, ParamRegistry params);
  ModelDims dims_;
  ParamRegistry params_;
};

/// Per-location distribution over text tokens recorded by a cross-attention
/// layer.
struct AttentionTrace {
  Matrix weights;  // (h·w) × s
  std::size_t layer = 0;
  std::size_t timestep = 0;
};

struct AttentionResult {
  Matrix out;  // Softmax(Q·Kᵀ/sqrt(d'))·V
  AttentionTrace trace;
};

/// Single-head cross-attention with Q = f·wqᵀ, K = c·wkᵀ, V = c·wvᵀ.
AttentionResult cross_attention(const Matrix& f, const Matrix& c, const Matrix& wq,
                                const Matrix& wk, const Matrix& wv);

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

Matrix predict_eps(const DenoiserNet& model, const Matrix& x_t, std::size_t t, const Matrix& c,
                   std::vector<AttentionTrace>* traces = nullptr);

/// Mean attention weight of `token_index` per spatial location, reshaped to
/// the patch grid.
Matrix mean_attention_map(const std::vector<AttentionTrace>& traces, std::size_t token_index);

/// Gradients of a scalar loss with respect to every registry entry and the
/// caption features.
struct Gradients {
  ParamRegistry params;
  Matrix text;
};

/// Masked ε-MSE on one example and its gradients. Gradients are scaled by
/// `weight` and added into `acc` (acc.text is overwritten with this
/// example's caption-feature gradient, also scaled).
double accumulate_gradients(const DenoiserNet& model, const Matrix& x_t, std::size_t t,
                            const Matrix& c, const Matrix& eps, const Matrix& mask, double w_t,
                            double weight, Gradients& acc);

Matrix patchify(const Matrix& image, std::size_t patch);
Matrix unpatchify(const Matrix& patches, std::size_t image_size, std::size_t patch);
Matrix timestep_embedding(std::size_t t, std::size_t dim);

}  // namespace cdiff
