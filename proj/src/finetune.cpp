// SPDX-License-Identifier: Apache-2.0
#include "customdiff/finetune.hpp"

#include <cmath>
#include <map>

#include "customdiff/error.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

namespace {

constexpr double kDivergenceFactor = 1e3;

struct StepResult {
  double loss = 0.0;
  Gradients grads;
  std::map<std::size_t, std::vector<double>> token_grads;  // vocab row -> gradient
};

// Mean loss over the batch and its gradients. `tracked` lists the vocab rows
// whose embedding gradients are collected.
StepResult batch_gradients(const Pipeline& model, std::span<const AugmentedSample> batch,
                           const std::set<std::size_t>& tracked, Rng& rng) {
  StepResult r;
  r.grads.params = model.net.params().zeros_like();
  for (std::size_t idx : tracked) r.token_grads[idx].assign(model.vocab.dim(), 0.0);
  const double weight = 1.0 / static_cast<double>(batch.size());
  const std::size_t T = model.schedule.steps();
  for (const auto& item : batch) {
    const TokenSeq seq = tokenize(model.vocab, item.caption);
    const Matrix c = encode_caption(model.vocab, seq);
    const std::size_t t = 1 + uniform_index(rng, T);
    const Matrix eps = gaussian(item.image.rows(), item.image.cols(), rng);
    const NoisySample ns = forward_noise(item.image, t, eps, model.schedule);
    r.loss += weight * accumulate_gradients(model.net, ns.x_t, t, c, eps, item.valid_mask, 1.0,
                                            weight, r.grads);
    for (std::size_t p = 0; p < seq.size(); ++p) {
      auto it = r.token_grads.find(seq[p]);
      if (it == r.token_grads.end()) continue;
      for (std::size_t k = 0; k < it->second.size(); ++k) it->second[k] += r.grads.text(p, k);
    }
  }
  return r;
}

AugmentedSample plain(const ConceptExample& ex) {
  return AugmentedSample{ex.image, ex.caption, Matrix(ex.image.rows(), ex.image.cols(), 1.0), 1.0};
}

}  // namespace

const char* scope_name(TrainableScope scope) {
  return scope == TrainableScope::KvOnly ? "kv_only" : "all_unet";
}

TrainableScope scope_from_name(std::string_view name) {
  if (name == "kv_only") return TrainableScope::KvOnly;
  if (name == "all_unet") return TrainableScope::AllUnet;
  fail(ErrorCode::InvalidInput, "trainable_scope must be kv_only or all_unet, got '" + std::string(name) + "'");
}

const char* reg_mode_name(RegMode mode) {
  switch (mode) {
    case RegMode::Retrieved: return "retrieved";
    case RegMode::Generated: return "generated";
    case RegMode::None: return "none";
  }
  return "none";
}

RegMode reg_mode_from_name(std::string_view name) {
  if (name == "retrieved") return RegMode::Retrieved;
  if (name == "generated") return RegMode::Generated;
  if (name == "none") return RegMode::None;
  fail(ErrorCode::InvalidInput, "use_reg must be retrieved, generated or none, got '" + std::string(name) + "'");
}

void FineTuneConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail(ErrorCode::InvalidInput, "learning_rate must be positive");
  }
  if (batch < 1) fail(ErrorCode::InvalidInput, "batch must be >= 1");
}

std::set<std::string> trainable_set(const DenoiserNet& model, TrainableScope scope) {
  std::set<std::string> out;
  for (const auto& e : model.params().entries()) {
    if (scope == TrainableScope::AllUnet || is_kv(e.role)) out.insert(e.name);
  }
  return out;
}

void sgd_step(Matrix& param, const Matrix& grad, double lr) {
  if (!param.same_shape(grad)) fail(ErrorCode::InvalidInput, "sgd_step: shape mismatch");
  if (!all_finite(grad)) fail(ErrorCode::NumericalFailure, "sgd_step: non-finite gradient");
  for (std::size_t i = 0; i < param.size(); ++i) param[i] -= lr * grad[i];
}

TrainReport finetune(const Pipeline& model, std::span<const Concept> concepts,
                     const FineTuneConfig& cfg, const RegularizationSet* reg,
                     const CheckpointHook& hook) {
  cfg.validate();
  if (concepts.empty()) fail(ErrorCode::InvalidInput, "finetune: no concepts");
  const bool use_reg = cfg.use_reg != RegMode::None;
  if (use_reg && (!reg || reg->examples.empty())) {
    fail(ErrorCode::EmptyRegularizationSet,
         std::string("finetune: use_reg = ") + reg_mode_name(cfg.use_reg) + " needs a non-empty regularization set");
  }

  std::vector<ConceptExample> targets;
  std::set<std::size_t> rows;
  std::set<std::string> surfaces;
  for (const auto& item : concepts) {
    if (item.examples.empty()) fail(ErrorCode::InvalidInput, "finetune: concept '" + item.modifier + "' has no images");
    const ModifierToken* mod = model.find_modifier(item.modifier);
    if (!mod) fail(ErrorCode::InvalidInput, "finetune: modifier '" + item.modifier + "' is not registered");
    if (!surfaces.insert(mod->surface).second || !rows.insert(mod->token_index).second) {
      fail(ErrorCode::InvalidInput, "finetune: concepts must use distinct modifier tokens");
    }
    targets.insert(targets.end(), item.examples.begin(), item.examples.end());
  }
  if (!cfg.optimize_modifier) rows.clear();

  TrainReport report{{}, {}, {}, model};
  Pipeline& m = report.tuned;
  const std::set<std::string> keys = trainable_set(m.net, cfg.trainable_scope);

  BalancedBatches stream(std::move(targets), use_reg ? reg : nullptr, std::max<std::size_t>(cfg.batch, 2),
                         derive_seed(cfg.seed, 1));
  Rng rng(derive_seed(cfg.seed, 2));
  double initial = 0.0;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<AugmentedSample> batch;
    const auto items = stream.next();
    for (std::size_t i = 0; i < cfg.batch && i < items.size(); ++i) {
      const auto& it = items[i];
      batch.push_back(cfg.use_aug && it.is_target ? augment(it.example, rng) : plain(it.example));
    }
    StepResult r = batch_gradients(m, batch, rows, rng);
    if (!std::isfinite(r.loss)) fail(ErrorCode::NumericalFailure, "finetune: non-finite loss at step " + std::to_string(step));
    if (step == 1) initial = r.loss;
    if (initial > 0.0 && r.loss > kDivergenceFactor * initial) {
      fail(ErrorCode::Divergence, "finetune: loss " + std::to_string(r.loss) + " at step " +
                                      std::to_string(step) + " exceeds 1000x the initial loss");
    }
    report.loss_curve.push_back(r.loss);

    for (auto& e : m.net.params().entries()) {
      if (keys.count(e.name)) sgd_step(e.value, r.grads.params.at(e.name), cfg.learning_rate);
    }
    for (const auto& [row, g] : r.token_grads) {
      Matrix emb = Matrix::row_vector(m.vocab.embedding(row));
      sgd_step(emb, Matrix::row_vector(g), cfg.learning_rate);
      m.vocab.set_embedding(row, emb.data());
    }
    m.sync_modifiers();
    if (hook.fn && hook.every > 0 && step % hook.every == 0) hook.fn(step, m);
  }

  report.final_params = m.net.params();
  report.modifier_embeddings = m.modifiers;
  return report;
}

TrainReport finetune_sequential(const Pipeline& model, const Concept& a, const Concept& b,
                                const FineTuneConfig& cfg_a, const FineTuneConfig& cfg_b,
                                const RegularizationSet* reg_a, const RegularizationSet* reg_b) {
  TrainReport first = finetune(model, std::span<const Concept>(&a, 1), cfg_a, reg_a);
  TrainReport second = finetune(first.tuned, std::span<const Concept>(&b, 1), cfg_b, reg_b);
  first.loss_curve.insert(first.loss_curve.end(), second.loss_curve.begin(), second.loss_curve.end());
  second.loss_curve = std::move(first.loss_curve);
  return second;
}

DenoiserNet pretrain(const ModelDims& dims, const Vocabulary& vocab, const NoiseSchedule& sched,
                     const PretrainConfig& cfg, const ExampleSource& source,
                     std::vector<double>* loss_curve) {
  if (cfg.batch < 1) fail(ErrorCode::InvalidInput, "pretrain: batch must be >= 1");
  if (!(cfg.learning_rate > 0.0)) fail(ErrorCode::InvalidInput, "pretrain: learning_rate must be positive");
  if (dims.text_dim != vocab.dim()) fail(ErrorCode::InvalidInput, "pretrain: text_dim does not match the vocabulary");
  Pipeline m{DenoiserNet::create(dims, derive_seed(cfg.seed, 0)), vocab, sched, {}};
  Rng rng(derive_seed(cfg.seed, 1));

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  ParamRegistry first = m.net.params().zeros_like();
  ParamRegistry second = m.net.params().zeros_like();
  std::bernoulli_distribution drop(cfg.caption_dropout);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    std::vector<AugmentedSample> batch;
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      ConceptExample ex = source(rng);
      if (drop(rng)) ex.caption.clear();
      batch.push_back(plain(ex));
    }
    StepResult r = batch_gradients(m, batch, {}, rng);
    if (!std::isfinite(r.loss)) fail(ErrorCode::NumericalFailure, "pretrain: non-finite loss at step " + std::to_string(step));
    if (loss_curve) loss_curve->push_back(r.loss);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    auto& entries = m.net.params().entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      Matrix& p = entries[k].value;
      const Matrix& g = r.grads.params.entries()[k].value;
      Matrix& mo = first.entries()[k].value;
      Matrix& ve = second.entries()[k].value;
      for (std::size_t i = 0; i < p.size(); ++i) {
        mo[i] = beta1 * mo[i] + (1.0 - beta1) * g[i];
        ve[i] = beta2 * ve[i] + (1.0 - beta2) * g[i] * g[i];
        p[i] -= cfg.learning_rate * (mo[i] / c1) / (std::sqrt(ve[i] / c2) + adam_eps);
      }
    }
  }
  return std::move(m.net);
}

}  // namespace cdiff
