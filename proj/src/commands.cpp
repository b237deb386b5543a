// SPDX-License-Identifier: Apache-2.0
#include "customdiff/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>

#include "customdiff/analysis.hpp"
#include "customdiff/checkpoint.hpp"
#include "customdiff/data.hpp"
#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"
#include "customdiff/merge.hpp"
#include "customdiff/toyworld.hpp"

namespace cdiff {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(ErrorCode::InvalidInput, std::string(where) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      fail(ErrorCode::InvalidInput, std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, std::string_view where) {
  if (!j.contains(key)) return;
  try {
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw std::invalid_argument("expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    }
    out = v.get<T>();
  } catch (const std::exception& e) {
    fail(ErrorCode::InvalidInput, std::string(where) + "." + key + ": " + e.what());
  }
}

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty() || base_dir.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (std::filesystem::path(base_dir) / path).string();
}

// Command options as given by the CLI.
class Options {
 public:
  Options(std::string_view command, const json& j, std::initializer_list<std::string_view> allowed)
      : command_(command), j_(j.is_null() ? json::object() : j) {
    if (!j_.is_object()) fail(ErrorCode::Usage, command_ + ": options must be a JSON object");
    for (const auto& [key, _] : j_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail(ErrorCode::Usage, command_ + ": unknown option --" + key);
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  std::string str(const char* key) const {
    if (!has(key)) fail(ErrorCode::Usage, command_ + ": missing required option --" + key);
    return get<std::string>(key);
  }
  std::string str(const char* key, std::string def) const { return has(key) ? get<std::string>(key) : def; }

  std::vector<std::string> list(const char* key) const {
    if (!has(key)) return {};
    if (j_.at(key).is_string()) return {j_.at(key).get<std::string>()};
    return get<std::vector<std::string>>(key);
  }

  double num(const char* key, double def) const { return has(key) ? get<double>(key) : def; }
  std::size_t count(const char* key, std::size_t def) const {
    if (!has(key)) return def;
    if (!j_.at(key).is_number_integer() || j_.at(key).get<long long>() < 0) {
      fail(ErrorCode::InvalidInput, command_ + ": --" + key + " must be a non-negative integer");
    }
    return j_.at(key).get<std::size_t>();
  }

  const json& raw() const { return j_; }
  const std::string& command() const { return command_; }

 private:
  template <typename T>
  T get(const char* key) const {
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorCode::InvalidInput, command_ + ": --" + key + " has the wrong type");
    }
  }

  std::string command_;
  json j_;
};

ExperimentConfig load_config(const Options& o) {
  return o.has("config") ? ExperimentConfig::load(o.str("config")) : ExperimentConfig{};
}

std::string write_json(const std::string& path, const json& j) {
  write_file(path, j.dump(2) + "\n");
  return path;
}

Pipeline load_model(const Options& o) {
  Pipeline m = load_pipeline(o.str("model"));
  for (const auto& d : o.list("delta")) m = apply_delta(m, load_delta(d));
  return m;
}

// Clean copy of a model's vocabulary: same tokens and seed, untouched table.
Vocabulary frozen_vocabulary(const Vocabulary& v) {
  return Vocabulary(v.tokens(), v.counts(), v.dim(), v.seed());
}

// K/V differences of any two models, without extract_delta's scope check.
DeltaCheckpoint kv_differences(const Pipeline& base, const Pipeline& tuned) {
  DeltaCheckpoint d;
  for (const auto& e : base.net.params().entries()) {
    if (!is_kv(e.role)) continue;
    DeltaEntry de;
    de.name = e.name;
    de.layer = e.layer;
    de.role = e.role;
    de.rows = e.value.rows();
    de.cols = e.value.cols();
    de.dense = tuned.net.params().at(e.name) - e.value;
    d.entries.push_back(std::move(de));
  }
  return d;
}

std::string category_of(const std::vector<ConceptExample>& examples, const Vocabulary& vocab) {
  // Last non-modifier word of the first caption.
  const auto words = split_words(examples.front().caption);
  for (auto it = words.rbegin(); it != words.rend(); ++it) {
    if (!vocab.is_alias(*it)) return *it;
  }
  fail(ErrorCode::InvalidInput, "cannot infer a category from caption '" + examples.front().caption + "'");
}

std::string cmd_pretrain(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const std::string out = o.str("out");
  Vocabulary vocab = config_vocabulary(cfg);
  const NoiseSchedule sched = NoiseSchedule::scaled_linear(cfg.schedule_steps);
  ExampleSource source = [](Rng& rng) { return toy::pretrain_example(rng, 0.0); };
  std::vector<ConceptExample> data;
  if (o.has("data")) {
    data = load_dataset(o.str("data"));
    if (data.empty()) fail(ErrorCode::InvalidInput, "pretrain: dataset is empty");
    source = [&data](Rng& rng) { return data[uniform_index(rng, data.size())]; };
  }
  PretrainConfig pc = cfg.pretrain;
  pc.seed = cfg.seed;
  std::vector<double> curve;
  DenoiserNet net = pretrain(cfg.model, vocab, sched, pc, source, &curve);
  save_pipeline(out, Pipeline{std::move(net), std::move(vocab), sched, {}}, CheckpointKind::Base);
  write_json(out + ".loss.json", {{"loss_curve", curve}});
  write_run_manifest(out, o.command(), o.raw(), cfg.to_json());
  return "pretrained " + std::to_string(pc.steps) + " steps -> " + out;
}

std::string cmd_finetune(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const std::string out = o.str("out");
  Pipeline base = load_pipeline(o.str("base"));
  const auto concept_paths = o.list("concept");
  const auto modifiers = o.list("modifier");
  if (concept_paths.empty()) fail(ErrorCode::Usage, "finetune: at least one --concept is required");
  if (concept_paths.size() != modifiers.size()) {
    fail(ErrorCode::Usage, "finetune: give one --modifier per --concept");
  }
  const Pipeline pristine = base;
  std::vector<Concept> concepts;
  for (std::size_t i = 0; i < concept_paths.size(); ++i) {
    if (!base.find_modifier(modifiers[i])) base.add_modifier(modifiers[i]);
    Concept c{load_dataset(concept_paths[i]), modifiers[i]};
    if (c.examples.empty()) fail(ErrorCode::InvalidInput, "finetune: " + concept_paths[i] + " has no images");
    for (const auto& ex : c.examples) tokenize(base.vocab, ex.caption);
    concepts.push_back(std::move(c));
  }

  FineTuneConfig ft = cfg.finetune;
  // Joint runs get twice the steps unless the config pins them.
  if (concepts.size() > 1 && !cfg.finetune_steps_set) ft.steps *= 2;
  if (o.has("steps")) ft.steps = o.count("steps", ft.steps);

  RegularizationSet reg;
  if (ft.use_reg == RegMode::Retrieved) {
    if (!o.has("reg")) fail(ErrorCode::Usage, "finetune: use_reg = retrieved needs --reg (see retrieve-reg)");
    reg.examples = load_dataset(o.str("reg"));
  } else if (ft.use_reg == RegMode::Generated) {
    reg.source = RegSource::Generated;
    SamplerOptions so;
    so.steps = cfg.sampler_steps;
    so.scale = cfg.sampler_scale;
    for (std::size_t i = 0; i < concepts.size(); ++i) {
      const auto gen = generate_regularization(pristine, category_of(concepts[i].examples, base.vocab),
                                               cfg.retrieval_cap, derive_seed(cfg.seed, 100 + i), so);
      reg.examples.insert(reg.examples.end(), gen.examples.begin(), gen.examples.end());
    }
  }

  const TrainReport rep = finetune(base, concepts, ft, ft.use_reg == RegMode::None ? nullptr : &reg);
  if (ft.trainable_scope == TrainableScope::KvOnly) {
    save_delta(out, extract_delta(base, rep.tuned), rep.tuned.net.dims());
  } else {
    save_pipeline(out, rep.tuned, CheckpointKind::Base);
  }
  json mods = json::array();
  for (const auto& m : rep.modifier_embeddings) mods.push_back({{"surface", m.surface}, {"embedding", m.embedding}});
  write_json(out + ".loss.json", {{"loss_curve", rep.loss_curve},
                                  {"steps", ft.steps},
                                  {"trainable_scope", scope_name(ft.trainable_scope)},
                                  {"use_reg", reg_mode_name(ft.use_reg)},
                                  {"modifiers", mods}});
  write_run_manifest(out, o.command(), o.raw(), cfg.to_json());
  return "fine-tuned " + std::to_string(ft.steps) + " steps (" + scope_name(ft.trainable_scope) + ") -> " + out;
}

std::string cmd_merge(const Options& o) {
  const std::string out = o.str("out");
  const Pipeline base = load_pipeline(o.str("base"));
  std::vector<DeltaCheckpoint> deltas;
  for (const auto& p : o.list("delta")) deltas.push_back(load_delta(p));
  if (deltas.empty()) fail(ErrorCode::Usage, "merge: at least one --delta is required");
  json targets;
  json reg;
  try {
    targets = json::parse(read_file(o.str("targets")));
    reg = json::parse(read_file(o.str("reg-captions")));
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidInput, std::string("merge: caption file is not valid JSON: ") + e.what());
  }
  std::vector<std::vector<std::string>> captions;
  std::vector<std::string> reg_captions;
  try {
    captions = targets.get<std::vector<std::vector<std::string>>>();
    reg_captions = reg.get<std::vector<std::string>>();
  } catch (const json::exception&) {
    fail(ErrorCode::InvalidInput, "merge: targets must be an array of caption arrays, reg-captions an array of captions");
  }
  const MergedModel merged = merge_model(base, deltas, captions, reg_captions);
  save_pipeline(out, merged.model, CheckpointKind::Merged);
  json layers = json::array();
  for (const auto& l : merged.layers) {
    layers.push_back({{"name", l.name},
                      {"targets", l.targets},
                      {"constraint_residual", l.constraint_residual},
                      {"objective_value", l.objective_value},
                      {"conditioning", l.conditioning},
                      {"ridge", l.ridge}});
  }
  write_json(out + ".merge.json", {{"layers", layers}});
  write_run_manifest(out, o.command(), o.raw(), json::object());
  return "merged " + std::to_string(deltas.size()) + " deltas -> " + out;
}

std::string cmd_sample(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const Pipeline model = load_model(o);
  const std::string prompt = o.str("prompt");
  const std::string out = o.str("out");
  SamplerOptions so;
  so.steps = o.count("steps", cfg.sampler_steps);
  so.scale = o.num("scale", cfg.sampler_scale);
  so.seed = o.count("seed", cfg.seed);
  if (so.steps < 1) fail(ErrorCode::InvalidInput, "sample: steps must be >= 1");
  if (!std::isfinite(so.scale)) fail(ErrorCode::InvalidInput, "sample: scale must be finite");
  const std::size_t n = o.count("n", 1);
  if (n < 1) fail(ErrorCode::InvalidInput, "sample: n must be >= 1");
  const auto images = model.sample_many(prompt, n, so);
  json j{{"prompt", prompt}, {"steps", so.steps}, {"scale", so.scale}, {"seed", so.seed}, {"images", json::array()}};
  for (std::size_t i = 0; i < images.size(); ++i) {
    write_file(out + "_" + std::to_string(i) + ".pgm", to_pgm(images[i]));
    j["images"].push_back({{"height", images[i].rows()}, {"width", images[i].cols()}, {"pixels", images[i].values()}});
  }
  write_json(out + ".json", j);
  write_run_manifest(out + ".json", o.command(), o.raw(), cfg.to_json());
  return "wrote " + std::to_string(n) + " samples (" + std::to_string(so.steps) + " steps, scale " +
         std::to_string(so.scale) + ") -> " + out + "_*.pgm";
}

std::string cmd_compress(const Options& o) {
  const std::string out = o.str("out");
  const double energy = o.num("energy", 0.6);
  const DeltaCheckpoint delta = load_delta(o.str("delta"));
  const DeltaCheckpoint packed = compress_delta(delta, energy);
  // Dims live in the source manifest; reuse them.
  const Container src = container_from_bytes(read_file(o.str("delta")));
  save_delta(out, packed, dims_from_json(src.meta.at("model")));
  json entries = json::array();
  for (const auto& e : packed.entries) {
    entries.push_back({{"name", e.name}, {"rank", e.factored ? e.rank() : std::min(e.rows, e.cols)},
                       {"factored", e.factored}, {"residual", e.residual}});
  }
  write_json(out + ".compress.json", {{"energy", energy}, {"entries", entries}});
  write_run_manifest(out, o.command(), o.raw(), json::object());
  return "compressed at energy " + std::to_string(energy) + " -> " + out;
}

std::string cmd_analyze(const Options& o) {
  const Pipeline base = load_pipeline(o.str("base"));
  const std::string tuned_path = o.str("tuned");
  const std::string out = o.str("out");
  const Container c = container_from_bytes(read_file(tuned_path));
  DeltaCheckpoint delta;
  Pipeline tuned = base;
  if (checkpoint_kind(c) == CheckpointKind::Delta) {
    delta = delta_from_container(c);
    tuned = apply_delta(base, delta);
  } else {
    tuned = pipeline_from_container(c);
    delta = kv_differences(base, tuned);
  }
  const ChangeReport report = delta_rate(base.net.params(), tuned.net.params());
  write_file(out, report.to_json_text() + "\n");
  if (o.has("spectra")) {
    std::ostringstream csv;
    csv << "layer,role,index,value\n";
    csv.precision(17);
    for (const auto& s : spectrum(delta)) {
      for (std::size_t i = 0; i < s.sigma.size(); ++i) {
        csv << s.layer << ',' << role_name(s.role) << ',' << i << ',' << s.sigma[i] << '\n';
      }
    }
    write_file(o.str("spectra"), csv.str());
  }
  write_run_manifest(out, o.command(), o.raw(), json::object());
  return "cross-attention mean delta " + std::to_string(report.cross_attention.mean_rate) + ", other " +
         std::to_string(report.other.mean_rate) + " -> " + out;
}

std::string cmd_eval(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const Pipeline model = load_model(o);
  const std::string prompt = o.str("prompt");
  const std::string out = o.str("out");
  const auto targets = load_dataset(o.str("targets"));
  const auto reference = o.has("reference") ? load_dataset(o.str("reference")) : targets;
  SamplerOptions so;
  so.steps = o.count("steps", cfg.sampler_steps);
  so.scale = o.num("scale", cfg.sampler_scale);
  so.seed = o.count("seed", cfg.seed);
  if (so.steps < 1) fail(ErrorCode::InvalidInput, "eval: steps must be >= 1");
  const std::size_t n = o.count("n", 16);
  if (n < 2) fail(ErrorCode::InvalidInput, "eval: n must be >= 2");
  const std::string mode = o.str("mode", "mean");
  if (mode != "mean" && mode != "max") fail(ErrorCode::InvalidInput, "eval: mode must be mean or max");

  const ReferenceFeaturizer feat = config_featurizer(cfg, frozen_vocabulary(model.vocab));
  const auto images = model.sample_many(prompt, n, so);
  std::vector<Matrix> target_images;
  for (const auto& t : targets) target_images.push_back(t.image);
  std::vector<Matrix> ref_images;
  for (const auto& t : reference) ref_images.push_back(t.image);

  MetricReport r;
  r.sample_count = n;
  r.image_alignment = image_alignment(images, target_images, feat, mode == "max" ? AlignmentMode::Max : AlignmentMode::Mean);
  r.text_alignment = text_alignment(images, prompt, model.vocab, feat);
  r.kid = kid(feat.image_features(images), feat.image_features(ref_images));
  write_file(out, r.to_json_text() + "\n");
  write_run_manifest(out, o.command(), o.raw(), cfg.to_json());
  return "text " + std::to_string(r.text_alignment) + ", image " + std::to_string(r.image_alignment) +
         ", KID x1000 " + std::to_string(r.kid * 1000.0) + " -> " + out;
}

std::string cmd_retrieve(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const std::string out = o.str("out");
  const std::string caption = o.str("caption");
  const auto pool = load_dataset(o.str("pool"));
  const double threshold = o.num("threshold", cfg.retrieval_threshold);
  const std::size_t cap = o.count("cap", cfg.retrieval_cap);
  Vocabulary vocab = config_vocabulary(cfg);
  for (const auto& m : o.list("modifier")) {
    if (!vocab.lookup(m)) register_modifier(vocab, m);
  }
  const ReferenceFeaturizer feat = config_featurizer(cfg, frozen_vocabulary(vocab));
  const TextFeaturizer tf = [&](std::string_view s) { return feat.text_feature(strip_modifiers(vocab, s)); };
  const RegularizationSet reg = retrieve_regularization(pool, caption, threshold, cap, tf);
  save_dataset(out, reg.examples);
  write_run_manifest(out, o.command(), o.raw(), cfg.to_json());
  return "retrieved " + std::to_string(reg.examples.size()) + " examples -> " + out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j, const std::string& base_dir) {
  reject_unknown(j, "config", {"seed", "model", "schedule", "vocab", "pretrain", "finetune", "sampler",
                               "retrieval", "featurizer", "paths"});
  ExperimentConfig c;
  read(j, "seed", c.seed, "config");
  if (j.contains("model")) c.model = dims_from_json(j.at("model"));
  if (j.contains("schedule")) {
    reject_unknown(j.at("schedule"), "schedule", {"steps"});
    read(j.at("schedule"), "steps", c.schedule_steps, "schedule");
  }
  if (j.contains("vocab")) {
    reject_unknown(j.at("vocab"), "vocab", {"seed"});
    read(j.at("vocab"), "seed", c.vocab_seed, "vocab");
  }
  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    reject_unknown(p, "pretrain", {"steps", "batch", "learning_rate", "caption_dropout"});
    read(p, "steps", c.pretrain.steps, "pretrain");
    read(p, "batch", c.pretrain.batch, "pretrain");
    read(p, "learning_rate", c.pretrain.learning_rate, "pretrain");
    read(p, "caption_dropout", c.pretrain.caption_dropout, "pretrain");
  }
  if (j.contains("finetune")) {
    const json& f = j.at("finetune");
    reject_unknown(f, "finetune", {"steps", "learning_rate", "batch", "trainable_scope", "use_reg", "use_aug",
                                   "optimize_modifier", "seed"});
    read(f, "steps", c.finetune.steps, "finetune");
    c.finetune_steps_set = f.contains("steps");
    read(f, "learning_rate", c.finetune.learning_rate, "finetune");
    read(f, "batch", c.finetune.batch, "finetune");
    std::string scope = scope_name(c.finetune.trainable_scope);
    read(f, "trainable_scope", scope, "finetune");
    c.finetune.trainable_scope = scope_from_name(scope);
    std::string reg = reg_mode_name(c.finetune.use_reg);
    read(f, "use_reg", reg, "finetune");
    c.finetune.use_reg = reg_mode_from_name(reg);
    read(f, "use_aug", c.finetune.use_aug, "finetune");
    read(f, "optimize_modifier", c.finetune.optimize_modifier, "finetune");
    read(f, "seed", c.finetune.seed, "finetune");
  }
  if (j.contains("sampler")) {
    reject_unknown(j.at("sampler"), "sampler", {"steps", "scale"});
    read(j.at("sampler"), "steps", c.sampler_steps, "sampler");
    read(j.at("sampler"), "scale", c.sampler_scale, "sampler");
  }
  if (j.contains("retrieval")) {
    reject_unknown(j.at("retrieval"), "retrieval", {"threshold", "cap"});
    read(j.at("retrieval"), "threshold", c.retrieval_threshold, "retrieval");
    read(j.at("retrieval"), "cap", c.retrieval_cap, "retrieval");
  }
  if (j.contains("featurizer")) {
    reject_unknown(j.at("featurizer"), "featurizer", {"seed", "dim", "calibration_per_category"});
    read(j.at("featurizer"), "seed", c.featurizer_seed, "featurizer");
    read(j.at("featurizer"), "dim", c.featurizer_dim, "featurizer");
    read(j.at("featurizer"), "calibration_per_category", c.calibration_per_category, "featurizer");
  }
  if (j.contains("paths")) {
    reject_unknown(j.at("paths"), "paths", {"vocab", "calibration"});
    read(j.at("paths"), "vocab", c.vocab_path, "paths");
    read(j.at("paths"), "calibration", c.calibration_path, "paths");
    c.vocab_path = resolve(c.vocab_path, base_dir);
    c.calibration_path = resolve(c.calibration_path, base_dir);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidInput, "config " + path + ": " + e.what());
  }
  return from_json(j, std::filesystem::path(path).parent_path().string());
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["model"] = dims_to_json(model);
  j["schedule"] = {{"steps", schedule_steps}};
  j["vocab"] = {{"seed", vocab_seed}};
  j["pretrain"] = {{"steps", pretrain.steps},
                   {"batch", pretrain.batch},
                   {"learning_rate", pretrain.learning_rate},
                   {"caption_dropout", pretrain.caption_dropout}};
  j["finetune"] = {{"steps", finetune.steps},
                   {"learning_rate", finetune.learning_rate},
                   {"batch", finetune.batch},
                   {"trainable_scope", scope_name(finetune.trainable_scope)},
                   {"use_reg", reg_mode_name(finetune.use_reg)},
                   {"use_aug", finetune.use_aug},
                   {"optimize_modifier", finetune.optimize_modifier},
                   {"seed", finetune.seed}};
  j["sampler"] = {{"steps", sampler_steps}, {"scale", sampler_scale}};
  j["retrieval"] = {{"threshold", retrieval_threshold}, {"cap", retrieval_cap}};
  j["featurizer"] = {{"seed", featurizer_seed}, {"dim", featurizer_dim},
                     {"calibration_per_category", calibration_per_category}};
  j["paths"] = {{"vocab", vocab_path}, {"calibration", calibration_path}};
  return j;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (schedule_steps < 2) fail(ErrorCode::InvalidInput, "schedule.steps must be >= 2");
  if (pretrain.batch < 1) fail(ErrorCode::InvalidInput, "pretrain.batch must be >= 1");
  if (!(pretrain.learning_rate > 0.0)) fail(ErrorCode::InvalidInput, "pretrain.learning_rate must be positive");
  if (!(pretrain.caption_dropout >= 0.0 && pretrain.caption_dropout <= 1.0)) {
    fail(ErrorCode::InvalidInput, "pretrain.caption_dropout must lie in [0, 1]");
  }
  try {
    finetune.validate();
  } catch (const Error& e) {
    fail(ErrorCode::InvalidInput, std::string("finetune.") + e.what());
  }
  if (sampler_steps < 1) fail(ErrorCode::InvalidInput, "sampler.steps must be >= 1");
  if (!std::isfinite(sampler_scale)) fail(ErrorCode::InvalidInput, "sampler.scale must be finite");
  if (!(retrieval_threshold >= 0.0 && retrieval_threshold <= 1.0)) {
    fail(ErrorCode::InvalidInput, "retrieval.threshold must lie in [0, 1]");
  }
  if (featurizer_dim < 1) fail(ErrorCode::InvalidInput, "featurizer.dim must be >= 1");
}

Vocabulary config_vocabulary(const ExperimentConfig& cfg) {
  Vocabulary v = cfg.vocab_path.empty() ? toy::make_vocabulary(cfg.model.text_dim, cfg.vocab_seed)
                                        : Vocabulary::load(cfg.vocab_path);
  if (v.dim() != cfg.model.text_dim) {
    fail(ErrorCode::InvalidInput, "vocabulary dim " + std::to_string(v.dim()) + " differs from model.text_dim " +
                                      std::to_string(cfg.model.text_dim));
  }
  return v;
}

ReferenceFeaturizer config_featurizer(const ExperimentConfig& cfg, const Vocabulary& base_vocab) {
  const std::vector<ConceptExample> calibration =
      cfg.calibration_path.empty() ? toy::caption_pool(cfg.calibration_per_category, cfg.featurizer_seed)
                                   : load_dataset(cfg.calibration_path);
  const std::size_t pixels = cfg.model.image_size * cfg.model.image_size;
  return ReferenceFeaturizer::build(base_vocab, pixels, cfg.featurizer_dim, cfg.featurizer_seed, calibration);
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void write_run_manifest(const std::string& artifact, std::string_view command, const json& options,
                        const json& config) {
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx",
                static_cast<unsigned long long>(fnv1a(options.dump() + config.dump())));
  write_json(artifact + ".run.json", {{"command", command},
                                      {"artifact", std::filesystem::path(artifact).filename().string()},
                                      {"config_hash", hash},
                                      {"options", options},
                                      {"config", config},
                                      {"version", std::string("customdiff ") + kVersion}});
}

std::string to_pgm(const Matrix& image) {
  std::string out = "P5\n" + std::to_string(image.cols()) + " " + std::to_string(image.rows()) + "\n255\n";
  for (double v : image.data()) {
    const double g = std::clamp((v + 1.0) * 127.5, 0.0, 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(g))));
  }
  return out;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"pretrain", "finetune", "merge", "sample",
                                              "compress", "analyze", "eval", "retrieve-reg"};
  return names;
}

std::string run_command(std::string_view name, const json& options) {
  if (name == "pretrain") return cmd_pretrain(Options(name, options, {"config", "out", "data"}));
  if (name == "finetune") {
    return cmd_finetune(Options(name, options, {"config", "base", "concept", "modifier", "reg", "out", "steps"}));
  }
  if (name == "merge") return cmd_merge(Options(name, options, {"base", "delta", "targets", "reg-captions", "out"}));
  if (name == "sample") {
    return cmd_sample(Options(name, options, {"config", "model", "delta", "prompt", "n", "steps", "scale", "seed", "out"}));
  }
  if (name == "compress") return cmd_compress(Options(name, options, {"delta", "energy", "out"}));
  if (name == "analyze") return cmd_analyze(Options(name, options, {"base", "tuned", "out", "spectra"}));
  if (name == "eval") {
    return cmd_eval(Options(name, options, {"config", "model", "delta", "prompt", "targets", "reference", "n",
                                            "steps", "scale", "seed", "mode", "out"}));
  }
  if (name == "retrieve-reg") {
    return cmd_retrieve(Options(name, options, {"config", "pool", "caption", "threshold", "cap", "modifier", "out"}));
  }
  fail(ErrorCode::Usage, "unknown command '" + std::string(name) + "'");
}

}  // namespace cdiff
