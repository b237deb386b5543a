// SPDX-License-Identifier: Apache-2.0
// Acceptance run: one PASS/FAIL line per criterion, then a summary line.
// Exits non-zero only when a criterion could not be evaluated at all.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "customdiff/analysis.hpp"
#include "customdiff/checkpoint.hpp"
#include "customdiff/commands.hpp"
#include "customdiff/error.hpp"
#include "customdiff/evaluation.hpp"
#include "customdiff/finetune.hpp"
#include "customdiff/linalg.hpp"
#include "customdiff/merge.hpp"
#include "customdiff/random.hpp"
#include "customdiff/toyworld.hpp"
#include "support.hpp"

#ifndef CDIFF_CLI
#error "CDIFF_CLI must name the cdiff executable"
#endif

using namespace cdiff;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::vector<Matrix> images_of_examples(const std::vector<ConceptExample>& ex) {
  std::vector<Matrix> out;
  for (const auto& e : ex) out.push_back(e.image);
  return out;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared fixture: the bundled config, its base model and featurizer, and the
// concept fine-tunes several criteria look at.

const std::string kPrompt = "photo of a <new1> dog";

struct Fixture {
  ExperimentConfig cfg = ExperimentConfig::load(testing::data_path("config.json"));
  const Pipeline& base = testing::fixture_base();
  ReferenceFeaturizer feat = config_featurizer(cfg, toy::make_vocabulary(cfg.model.text_dim, cfg.vocab_seed));
  Concept dog{load_dataset(testing::data_path("spotted_dog.json")), "<new1>"};
  Concept moon{load_dataset(testing::data_path("ringed_moon.json")), "<new2>"};
  std::vector<Matrix> dog_targets = images_of_examples(dog.examples);

  Pipeline with_modifiers(std::initializer_list<const char*> surfaces) const {
    Pipeline p = base;
    for (const char* s : surfaces) p.add_modifier(s);
    return p;
  }

  // Single-concept run on the spotted dog: kv_only, no augmentation, batch
  // 16, seed 4, 250 steps. Regularization is the only thing varied.
  FineTuneConfig customization(RegMode reg) const {
    FineTuneConfig c = cfg.finetune;
    c.use_aug = false;
    c.use_reg = reg;
    c.steps = 250;
    return c;
  }

  RegularizationSet retrieved_reg() const {
    const Pipeline m = with_modifiers({"<new1>"});
    const TextFeaturizer tf = [&](std::string_view s) { return feat.text_feature(strip_modifiers(m.vocab, s)); };
    const auto pool = load_dataset(testing::data_path("pool.json"));
    return retrieve_regularization(pool, kPrompt, cfg.retrieval_threshold, cfg.retrieval_cap, tf);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

struct Trajectory {
  std::vector<std::size_t> steps;
  std::vector<double> image, text;
};

// The no-regularization customization run, with metrics at every 50 steps.
struct CustomRun {
  TrainReport report;
  Trajectory traj;
  Pipeline start;
};

const CustomRun& custom_run() {
  static const CustomRun run = [] {
    Fixture& f = fixture();
    const Pipeline start = f.with_modifiers({"<new1>"});
    Trajectory traj;
    SamplerOptions so;
    so.steps = f.cfg.sampler_steps;
    so.scale = f.cfg.sampler_scale;
    so.seed = 123;
    auto record = [&](std::size_t step, const Pipeline& m) {
      const auto imgs = m.sample_many(kPrompt, 48, so);
      traj.steps.push_back(step);
      traj.image.push_back(image_alignment(imgs, f.dog_targets, f.feat));
      traj.text.push_back(text_alignment(imgs, kPrompt, m.vocab, f.feat));
    };
    record(0, start);
    TrainReport report = finetune(start, std::span<const Concept>(&f.dog, 1), f.customization(RegMode::None),
                                  nullptr, CheckpointHook{50, record});
    return CustomRun{std::move(report), std::move(traj), start};
  }();
  return run;
}

const TrainReport& reg_run() {
  static const TrainReport r = [] {
    Fixture& f = fixture();
    const RegularizationSet reg = f.retrieved_reg();
    return finetune(f.with_modifiers({"<new1>"}), std::span<const Concept>(&f.dog, 1),
                    f.customization(RegMode::Retrieved), &reg);
  }();
  return r;
}

// ---------------------------------------------------------------------------

Matrix null_projector(const Matrix& c) {
  const Matrix inv = linalg::inverse(matmul_nt(c, c));
  return Matrix::identity(c.cols()) - matmul_tn(c, matmul(inv, c));
}

Verdict merge_correctness() {
  double worst_residual = 0.0, worst_kkt = 0.0, worst_gap = INFINITY;
  bool ok = true;
  for (std::size_t i = 0; i < 20; ++i) {
    const std::size_t o = i % 2 ? 8 : 2;
    const std::size_t d = (i / 2) % 2 ? 16 : 3;
    // Four independent constraints need d >= 4; with d = 3 at most three fit.
    const std::size_t s = std::min<std::size_t>((i / 4) % 2 ? 4 : 1, d);
    Rng rng(1000 + i);
    MergeProblem p;
    p.w0 = gaussian(o, d, rng);
    for (int n = 0; n < 2; ++n) p.concept_weights.push_back(p.w0 + gaussian(o, d, rng, 0.3));
    p.target_features = gaussian(s, d, rng);
    for (std::size_t j = 0; j < s; ++j) p.owners.push_back(uniform_index(rng, 2));
    p.reg_features = gaussian(4 * d, d, rng);

    const MergeSolution sol = solve_closed_form(p);
    const double v_norm = linalg::frobenius_norm(build_targets(p));
    const double res = sol.constraint_residual / std::max(1.0, v_norm);
    const Matrix kkt = solve_kkt_oracle(p);
    const double rel = linalg::frobenius_norm(sol.w_hat - kkt) / std::max(1.0, linalg::frobenius_norm(kkt));
    const Matrix proj = null_projector(p.target_features);
    const double best = merge_objective(p, sol.w_hat);
    for (int k = 0; k < 100; ++k) {
      const Matrix w = sol.w_hat + matmul(gaussian(o, d, rng, 0.1), proj);
      worst_gap = std::min(worst_gap, merge_objective(p, w) - best);
    }
    worst_residual = std::max(worst_residual, res);
    worst_kkt = std::max(worst_kkt, rel);
    ok = ok && res <= 1e-8 && rel <= 1e-6;
  }
  ok = ok && worst_gap >= -1e-9;
  return {ok, fmt("max residual/max(1,|V|) %.2e, max KKT rel err %.2e, min objective gap %.3e", worst_residual,
                  worst_kkt, worst_gap)};
}

Verdict noop_merge() {
  const Pipeline& base = fixture().base;
  Pipeline with = fixture().with_modifiers({"<new1>"});
  const DeltaCheckpoint zero = extract_delta(with, with);
  const std::vector<DeltaCheckpoint> deltas{zero};
  const std::vector<std::vector<std::string>> targets{{kPrompt}};
  const auto reg = nlohmann::json::parse(read_file(testing::data_path("reg_captions.json"))).get<std::vector<std::string>>();
  const MergedModel merged = merge_model(base, deltas, targets, reg);
  bool same = base.net.params().same_structure(merged.model.net.params());
  std::size_t differing = 0;
  for (std::size_t k = 0; same && k < base.net.params().size(); ++k) {
    differing += !bit_equal(base.net.params().entries()[k].value, merged.model.net.params().entries()[k].value);
  }
  same = same && differing == 0;
  return {same, fmt("%zu of %zu registry entries differ from the base", differing, base.net.params().size())};
}

Verdict gradient_fidelity() {
  Fixture& f = fixture();
  Pipeline model = f.with_modifiers({"<new1>"});
  const std::size_t row = model.modifiers[0].token_index;
  const TokenSeq seq = tokenize(model.vocab, kPrompt);
  const std::size_t pos = static_cast<std::size_t>(std::find(seq.begin(), seq.end(), row) - seq.begin());
  Rng rng(77);
  const Matrix& x0 = f.dog.examples[0].image;
  const Matrix mask(x0.rows(), x0.cols(), 1.0);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;

  for (std::size_t t : {5u, 40u, 90u}) {
    const Matrix eps = gaussian(x0.rows(), x0.cols(), rng);
    const Matrix x_t = forward_noise(x0, t, eps, model.schedule).x_t;
    auto loss = [&](const DenoiserNet& net, const Matrix& c) {
      Gradients g{net.params().zeros_like(), {}};
      return accumulate_gradients(net, x_t, t, c, eps, mask, 1.0, 1.0, g);
    };
    const Matrix c = encode_caption(model.vocab, seq);
    Gradients g{model.net.params().zeros_like(), {}};
    accumulate_gradients(model.net, x_t, t, c, eps, mask, 1.0, 1.0, g);

    auto rel_err = [](const Matrix& a, const Matrix& b) {
      const double scale = std::max(linalg::frobenius_norm(a), linalg::frobenius_norm(b));
      return scale == 0.0 ? 0.0 : linalg::frobenius_norm(a - b) / scale;
    };
    DenoiserNet net = model.net;
    for (auto& e : net.params().entries()) {
      if (!is_kv(e.role)) continue;
      Matrix fd(e.value.rows(), e.value.cols());
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const double keep = e.value[i];
        e.value[i] = keep + h;
        const double up = loss(net, c);
        e.value[i] = keep - h;
        const double down = loss(net, c);
        e.value[i] = keep;
        fd[i] = (up - down) / (2 * h);
      }
      worst = std::max(worst, rel_err(g.params.at(e.name), fd));
      ++checked;
    }
    // The modifier embedding reaches the loss only through its caption row.
    Matrix analytic(1, model.vocab.dim()), fd(1, model.vocab.dim());
    for (std::size_t j = 0; j < model.vocab.dim(); ++j) {
      analytic[j] = g.text(pos, j);
      Vocabulary v = model.vocab;
      std::vector<double> emb(v.embedding(row).begin(), v.embedding(row).end());
      emb[j] += h;
      v.set_embedding(row, emb);
      const double up = loss(model.net, encode_caption(v, seq));
      emb[j] -= 2 * h;
      v.set_embedding(row, emb);
      const double down = loss(model.net, encode_caption(v, seq));
      fd[j] = (up - down) / (2 * h);
    }
    worst = std::max(worst, rel_err(analytic, fd));
    ++checked;
  }
  return {worst <= 1e-4, fmt("max relative error %.2e over %zu gradients at t = 5, 40, 90", worst, checked)};
}

Verdict scope_exactness() {
  Fixture& f = fixture();
  std::vector<std::pair<std::string, const TrainReport*>> runs{{"no reg", &custom_run().report},
                                                              {"retrieved reg", &reg_run()}};
  // The bundled config as-is: augmentation, retrieved regularization, two concepts.
  const Pipeline start = f.with_modifiers({"<new1>", "<new2>"});
  RegularizationSet reg = f.retrieved_reg();
  const std::vector<Concept> both{f.dog, f.moon};
  FineTuneConfig joint = f.cfg.finetune;
  joint.steps = 100;
  const TrainReport joint_run = finetune(start, both, joint, &reg);
  runs.emplace_back("joint with aug", &joint_run);

  std::size_t changed = 0, kv_moved = 0, kv_total = 0;
  for (const auto& [name, run] : runs) {
    const ParamRegistry& b = f.base.net.params();
    for (std::size_t k = 0; k < b.size(); ++k) {
      const bool equal = bit_equal(b.entries()[k].value, run->final_params.entries()[k].value);
      if (is_kv(b.entries()[k].role)) {
        ++kv_total;
        kv_moved += !equal;
      } else {
        changed += !equal;
      }
    }
  }
  return {changed == 0, fmt("%zu non-K/V entries changed across %zu kv_only runs (%zu of %zu K/V entries moved)",
                            changed, runs.size(), kv_moved, kv_total)};
}

Verdict toy_customization() {
  const Trajectory& tr = custom_run().traj;
  const std::size_t n = tr.image.size();
  int violations = 0;
  for (std::size_t i = 1; i < n; ++i) {
    violations += tr.image[i] < tr.image[i - 1];
    violations += tr.text[i] > tr.text[i - 1];
  }
  const double gain = tr.image.back() - tr.image.front();
  std::ostringstream os;
  os << fmt("image-alignment gain %.3f (need >= 0.05), %d trend violations (need <= 1); step:image/text", gain,
            violations);
  for (std::size_t i = 0; i < n; ++i) os << fmt(" %zu:%.3f/%.3f", tr.steps[i], tr.image[i], tr.text[i]);
  return {gain >= 0.05 && violations <= 1, os.str()};
}

Verdict regularization_drift() {
  Fixture& f = fixture();
  SamplerOptions so;
  so.steps = f.cfg.sampler_steps;
  so.scale = f.cfg.sampler_scale;
  so.seed = 999;
  const std::string prompt = "photo of a dog";
  const auto ref = f.feat.image_features(f.base.sample_many(prompt, 100, so));
  auto kid_of = [&](const TrainReport& r) {
    return 1000.0 * kid(f.feat.image_features(r.tuned.sample_many(prompt, 100, so)), ref);
  };
  const double with_reg = kid_of(reg_run());
  const double without = kid_of(custom_run().report);
  return {with_reg < without, fmt("KID x1000 vs pretrained on '%s': retrieved reg %.2f, none %.2f", prompt.c_str(),
                                  with_reg, without)};
}

Verdict compression_ladder() {
  const DeltaCheckpoint delta = extract_delta(custom_run().start, custom_run().report.tuned);
  double prev = INFINITY, worst_ey = 0.0;
  bool monotone = true, exact = true;
  std::ostringstream os;
  for (double energy : {0.01, 0.2, 0.6, 1.0}) {
    const DeltaCheckpoint c = compress_delta(delta, energy);
    double err2 = 0.0;
    for (std::size_t k = 0; k < delta.entries.size(); ++k) {
      const Matrix& dense = delta.entries[k].dense;
      const double e = linalg::frobenius_norm(c.entries[k].reconstruct() - dense);
      // Eckart–Young: the error of the best rank-r approximation is the norm
      // of the dropped singular values.
      const auto sigma = linalg::thin_svd(dense).sigma;
      const std::size_t r = energy_rank(sigma, energy);
      double dropped = 0.0;
      for (std::size_t i = r; i < sigma.size(); ++i) dropped += sigma[i] * sigma[i];
      worst_ey = std::max(worst_ey, std::abs(e - std::sqrt(dropped)));
      err2 += e * e;
      if (energy == 1.0) exact = exact && bit_equal(c.entries[k].reconstruct(), dense);
    }
    const double err = std::sqrt(err2);
    monotone = monotone && err <= prev;
    prev = err;
    os << fmt(" %.2f:%.3e", energy, err);
  }
  return {monotone && exact && worst_ey <= 1e-8,
          fmt("exact at 1.0: %s, monotone: %s, max |err - Eckart-Young| %.2e; energy:error", exact ? "yes" : "no",
              monotone ? "yes" : "no", worst_ey) +
              os.str()};
}

Verdict delta_direction() {
  Fixture& f = fixture();
  const Pipeline start = f.with_modifiers({"<new1>"});
  FineTuneConfig c = f.customization(RegMode::None);
  c.trainable_scope = TrainableScope::AllUnet;
  const TrainReport r = finetune(start, std::span<const Concept>(&f.dog, 1), c, nullptr);
  const ChangeReport rep = delta_rate(start.net.params(), r.final_params);
  const double cross = rep.cross_attention.mean_rate, other = rep.other.mean_rate;
  std::string largest;
  double top = 0.0;
  for (const auto& k : rep.keys)
    if (k.rate > top) top = k.rate, largest = k.name;
  return {cross > other, fmt("mean delta: cross-attention %.4f, self-attention %.4f, other %.4f; largest %s %.4f",
                             cross, rep.self_attention.mean_rate, other, largest.c_str(), top)};
}

Verdict kid_estimator() {
  // Scalar oracle: unbiased MMD² with k(a, b) = (a·b/dim + 1)³.
  auto oracle = [](const std::vector<FeatureVec>& x, const std::vector<FeatureVec>& y) {
    auto k = [](const FeatureVec& a, const FeatureVec& b) {
      double dot = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
      return std::pow(dot / static_cast<double>(a.size()) + 1.0, 3);
    };
    const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < x.size(); ++j)
        if (i != j) xx += k(x[i], x[j]);
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t j = 0; j < y.size(); ++j)
        if (i != j) yy += k(y[i], y[j]);
    for (const auto& a : x)
      for (const auto& b : y) xy += k(a, b);
    return xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2.0 * xy / (m * n);
  };
  Rng rng(5);
  auto draw = [&](std::size_t count, double shift) {
    std::vector<FeatureVec> v(count, FeatureVec(12));
    std::normal_distribution<double> normal(shift, 1.0);
    for (auto& f : v)
      for (auto& x : f) x = normal(rng);
    return v;
  };
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto x = draw(4, 0.0), y = draw(4, i % 2 ? 0.5 : 0.0);
    const double o = oracle(x, y);
    worst = std::max(worst, std::abs(kid(x, y) - o) / std::max(1.0, std::abs(o)));
  }

  // Same distribution at m = n = 500: compare with the permutation null.
  Fixture& f = fixture();
  const auto a = f.feat.image_features(images_of_examples(toy::category_images("dog", 500, 61)));
  const auto b = f.feat.image_features(images_of_examples(toy::category_images("dog", 500, 62)));
  const double observed = kid(a, b);
  std::vector<FeatureVec> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<double> null;
  for (int p = 0; p < 100; ++p) {
    std::shuffle(pooled.begin(), pooled.end(), rng);
    null.push_back(kid(std::span(pooled).first(500), std::span(pooled).last(500)));
  }
  double mean = 0.0, var = 0.0;
  for (double v : null) mean += v / static_cast<double>(null.size());
  for (double v : null) var += (v - mean) * (v - mean) / static_cast<double>(null.size() - 1);
  const double z = (observed - mean) / std::sqrt(var);
  return {worst <= 1e-12 && std::abs(z) <= 3.0,
          fmt("m=n=4 max rel diff vs oracle %.1e; m=n=500 KID %.3e, null mean %.3e sd %.3e, z = %.2f", worst,
              observed, mean, std::sqrt(var), z)};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path().string());
  return files;
}

void cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CDIFF_CLI + "\" " + args + " > /dev/null";
  if (std::system(cmd.c_str()) != 0) fail(ErrorCode::Io, "command failed: " + cmd);
}

std::string q(const std::string& s) { return "\"" + s + "\""; }

void cli_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto p = [&](const char* name) { return q((dir / name).string()); };
  auto data = [](const char* name) { return q(testing::data_path(name)); };
  // The bundled config with short pretraining and fine-tuning runs.
  nlohmann::json cfg = nlohmann::json::parse(read_file(testing::data_path("config.json")));
  cfg["pretrain"]["steps"] = 300;
  cfg["finetune"]["steps"] = 30;
  write_file((dir / "config.json").string(), cfg.dump(2));

  cli("pretrain --config " + p("config.json") + " --out " + p("base.cdck"));
  cli("retrieve-reg --config " + p("config.json") + " --pool " + data("pool.json") + " --caption " + q(kPrompt) +
      " --modifier \"<new1>\" --out " + p("reg.json"));
  cli("finetune --config " + p("config.json") + " --base " + p("base.cdck") + " --concept " +
      data("spotted_dog.json") + " --modifier \"<new1>\" --reg " + p("reg.json") + " --out " + p("dog.cdck"));
  cli("finetune --config " + p("config.json") + " --base " + p("base.cdck") + " --concept " +
      data("ringed_moon.json") + " --modifier \"<new2>\" --reg " + p("reg.json") + " --out " + p("moon.cdck"));
  cli("merge --base " + p("base.cdck") + " --delta " + p("dog.cdck") + " --delta " + p("moon.cdck") +
      " --targets " + data("merge_targets.json") + " --reg-captions " + data("reg_captions.json") + " --out " +
      p("merged.cdck"));
  cli("compress --delta " + p("dog.cdck") + " --energy 0.6 --out " + p("dog60.cdck"));
  cli("sample --config " + p("config.json") + " --model " + p("base.cdck") + " --delta " + p("dog60.cdck") +
      " --prompt " + q(kPrompt) + " --n 3 --steps 20 --seed 3 --out " + p("sample"));
  cli("analyze --base " + p("base.cdck") + " --tuned " + p("dog.cdck") + " --out " + p("analysis.json") +
      " --spectra " + p("spectra.csv"));
  cli("eval --config " + p("config.json") + " --model " + p("merged.cdck") + " --prompt " +
      q("photo of a <new1> dog and a <new2> moon") + " --targets " + data("spotted_dog.json") +
      " --n 4 --steps 20 --seed 5 --out " + p("eval.json"));
}

Verdict determinism() {
  const fs::path dir = fs::path(CDIFF_FIXTURE_DIR) / "scratch" / "acceptance_cli";
  cli_pipeline(dir);
  const auto first = snapshot(dir);
  cli_pipeline(dir);
  const auto second = snapshot(dir);
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    differing += it == second.end() || it->second != bytes;
  }
  differing += second.size() > first.size() ? second.size() - first.size() : 0;

  // save / load / save through the container codecs.
  std::size_t unstable = 0, checkpoints = 0;
  for (const auto& [name, bytes] : first) {
    if (!name.ends_with(".cdck")) continue;
    ++checkpoints;
    const Container c = container_from_bytes(bytes);
    const CheckpointKind kind = checkpoint_kind(c);
    const Container again = kind == CheckpointKind::Delta
                                ? delta_to_container(delta_from_container(c), dims_from_json(c.meta.at("model")))
                                : pipeline_to_container(pipeline_from_container(c), kind);
    unstable += container_to_bytes(again) != bytes;
  }
  return {differing == 0 && unstable == 0 && checkpoints == 5,
          fmt("%zu of %zu artifacts differ between runs; %zu of %zu checkpoints change on save/load/save", differing,
              first.size(), unstable, checkpoints)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> criteria{
      {"merge correctness", 10, merge_correctness},
      {"no-op merge identity", 1, noop_merge},
      {"gradient fidelity", 60, gradient_fidelity},
      {"scope exactness", 120, scope_exactness},
      {"toy customization", 180, toy_customization},
      {"regularization mitigates drift", 240, regularization_drift},
      {"compression ladder", 30, compression_ladder},
      {"cross-attention changes most", 180, delta_direction},
      {"KID estimator", 30, kid_estimator},
      {"determinism and serialization", 300, determinism},
  };
  // Shared fine-tunes are paid for by whichever criterion needs them first;
  // warm them up front so each runtime covers only its own work.
  const auto warm_start = std::chrono::steady_clock::now();
  try {
    fixture();
    custom_run();
    reg_run();
  } catch (const std::exception& e) {
    std::printf("acceptance: error preparing the fixture: %s\n", e.what());
    return 1;
  }
  std::printf("fixture runs prepared in %.1f s\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - warm_start).count());

  int passed = 0, evaluated = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].run();
    } catch (const std::exception& e) {
      std::printf("FAIL %2zu %s: acceptance: error: %s\n", i + 1, criteria[i].name, e.what());
      std::fflush(stdout);
      continue;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = v.pass && secs < criteria[i].budget_s;
    ++evaluated;
    passed += pass;
    std::printf("%s %2zu %s: %s (%.1f s, limit %.0f s)\n", pass ? "PASS" : "FAIL", i + 1, criteria[i].name,
                v.detail.c_str(), secs, criteria[i].budget_s);
    std::fflush(stdout);
  }
  std::printf("acceptance: %d criteria evaluated, %d passed, %d failed\n", evaluated, passed, evaluated - passed);
  return evaluated == static_cast<int>(criteria.size()) ? 0 : 1;
}
