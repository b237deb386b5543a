// SPDX-License-Identifier: Apache-2.0
#include "customdiff/pipeline.hpp"

#include "customdiff/error.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

Matrix sample_cfg(const DenoiserNet& model, const Matrix& cond, const Matrix& uncond,
                  const SamplerOptions& opts, const NoiseSchedule& sched) {
  const std::size_t n = model.dims().image_size;
  EpsPredictor predict = [&](const Matrix& x, std::size_t t, bool conditional) {
    return predict_eps(model, x, t, conditional ? cond : uncond);
  };
  return sample_guided(predict, n, n, opts, sched);
}

Matrix Pipeline::features(std::string_view caption) const {
  return encode_caption(vocab, tokenize(vocab, caption));
}

Matrix Pipeline::sample(std::string_view prompt, const SamplerOptions& opts) const {
  return sample_cfg(net, features(prompt), features(""), opts, schedule);
}

std::vector<Matrix> Pipeline::sample_many(std::string_view prompt, std::size_t count,
                                          const SamplerOptions& opts) const {
  const Matrix cond = features(prompt);
  const Matrix uncond = features("");
  std::vector<Matrix> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SamplerOptions o = opts;
    o.seed = derive_seed(opts.seed, i);
    out.push_back(sample_cfg(net, cond, uncond, o, schedule));
  }
  return out;
}

const ModifierToken* Pipeline::find_modifier(std::string_view surface) const {
  for (const auto& m : modifiers)
    if (m.surface == surface) return &m;
  return nullptr;
}

void Pipeline::sync_modifiers() {
  for (auto& m : modifiers) {
    const auto row = vocab.embedding(m.token_index);
    m.embedding.assign(row.begin(), row.end());
  }
}

const ModifierToken& Pipeline::add_modifier(std::string surface) {
  if (find_modifier(surface)) fail(ErrorCode::InvalidInput, "modifier '" + surface + "' already registered");
  modifiers.push_back(register_modifier(vocab, std::move(surface)));
  return modifiers.back();
}

}  // namespace cdiff
