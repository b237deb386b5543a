// SPDX-License-Identifier: Apache-2.0
#include "customdiff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "customdiff/error.hpp"

namespace cdiff {

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail(ErrorCode::InvalidInput, "cosine: length mismatch");
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

namespace {

bool example_less(const ConceptExample& a, const ConceptExample& b) {
  if (a.caption != b.caption) return a.caption < b.caption;
  return std::lexicographical_compare(a.image.data().begin(), a.image.data().end(),
                                      b.image.data().begin(), b.image.data().end());
}

}  // namespace

RegularizationSet retrieve_regularization(std::span<const ConceptExample> pool,
                                          std::string_view target_caption, double threshold,
                                          std::size_t cap, const TextFeaturizer& featurizer) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    fail(ErrorCode::InvalidInput, "retrieve_regularization: threshold must lie in [0, 1]");
  }
  const auto target = featurizer(target_caption);
  struct Scored {
    double sim;
    const ConceptExample* ex;
  };
  std::vector<Scored> kept;
  for (const auto& ex : pool) {
    const double s = cosine(featurizer(ex.caption), target);
    if (s >= threshold) kept.push_back({s, &ex});
  }
  std::sort(kept.begin(), kept.end(), [](const Scored& a, const Scored& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return example_less(*a.ex, *b.ex);
  });
  if (kept.size() > cap) kept.resize(cap);
  if (kept.empty()) {
    fail(ErrorCode::EmptyRegularizationSet,
         "no pool caption reaches similarity " + std::to_string(threshold) + " to '" +
             std::string(target_caption) + "'");
  }
  RegularizationSet out;
  out.source = RegSource::Retrieved;
  out.target_caption = std::string(target_caption);
  for (const auto& k : kept) out.examples.push_back(*k.ex);
  return out;
}

RegularizationSet generate_regularization(const Pipeline& model, std::string_view category,
                                          std::size_t count, std::uint64_t seed,
                                          SamplerOptions opts) {
  RegularizationSet out;
  out.source = RegSource::Generated;
  out.target_caption = template_prompt(category);
  if (count == 0) return out;
  opts.seed = seed;
  for (auto& img : model.sample_many(out.target_caption, count, opts)) {
    for (double& v : img.data()) v = std::clamp(v, -1.0, 1.0);
    out.examples.push_back(ConceptExample{std::move(img), out.target_caption});
  }
  return out;
}

AugmentedSample augment_with_ratio(const ConceptExample& sample, double ratio, Rng& rng) {
  if (!(ratio > 0.0)) fail(ErrorCode::InvalidInput, "augment: ratio must be positive");
  const std::size_t h = sample.image.rows();
  const std::size_t w = sample.image.cols();
  const auto nh = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(h))));
  const auto nw = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratio * static_cast<double>(w))));

  // Nearest-neighbour resize.
  Matrix resized(nh, nw);
  for (std::size_t i = 0; i < nh; ++i) {
    const auto si = std::min(h - 1, static_cast<std::size_t>((static_cast<double>(i) + 0.5) * static_cast<double>(h) / static_cast<double>(nh)));
    for (std::size_t j = 0; j < nw; ++j) {
      const auto sj = std::min(w - 1, static_cast<std::size_t>((static_cast<double>(j) + 0.5) * static_cast<double>(w) / static_cast<double>(nw)));
      resized(i, j) = sample.image(si, sj);
    }
  }

  AugmentedSample out{Matrix(h, w), sample.caption, Matrix(h, w), ratio};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      // Canvas coordinate (i, j) maps to resized coordinate (i + oi, j + oj).
      const auto ri = static_cast<std::ptrdiff_t>(i) + (static_cast<std::ptrdiff_t>(nh) - static_cast<std::ptrdiff_t>(h)) / 2;
      const auto rj = static_cast<std::ptrdiff_t>(j) + (static_cast<std::ptrdiff_t>(nw) - static_cast<std::ptrdiff_t>(w)) / 2;
      if (ri >= 0 && rj >= 0 && ri < static_cast<std::ptrdiff_t>(nh) && rj < static_cast<std::ptrdiff_t>(nw)) {
        out.image(i, j) = resized(static_cast<std::size_t>(ri), static_cast<std::size_t>(rj));
        out.valid_mask(i, j) = 1.0;
      }
    }
  }

  const bool pick_first = std::bernoulli_distribution(0.5)(rng);
  if (ratio > 1.0) {
    out.caption += pick_first ? " zoomed in" : " close up";
  } else if (ratio < 0.6) {
    out.caption += pick_first ? " far away" : " very small";
  }
  return out;
}

AugmentedSample augment(const ConceptExample& sample, Rng& rng) {
  const bool upscale = std::uniform_int_distribution<int>(0, 2)(rng) == 0;
  const double ratio = upscale ? uniform(rng, 1.2, 1.4) : uniform(rng, 0.4, 1.0);
  return augment_with_ratio(sample, ratio, rng);
}

BalancedBatches::BalancedBatches(std::vector<ConceptExample> target, const RegularizationSet* reg,
                                 std::size_t batch, std::uint64_t seed)
    : target_(std::move(target)), batch_(batch), rng_(seed) {
  if (reg) reg_ = reg->examples;
  if (target_.empty() && reg_.empty()) fail(ErrorCode::InvalidInput, "balanced_batches: no examples");
  if (batch < 2) fail(ErrorCode::InvalidInput, "balanced_batches: batch must be >= 2");
  order_.resize(reg_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<BatchItem> BalancedBatches::next() {
  std::size_t n_target = target_.empty() ? 0 : reg_.empty() ? batch_ : (batch_ + 1) / 2;
  std::vector<BatchItem> out;
  out.reserve(batch_);
  for (std::size_t i = 0; i < n_target; ++i) {
    out.push_back({target_[uniform_index(rng_, target_.size())], true});
  }
  for (std::size_t i = n_target; i < batch_; ++i) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    out.push_back({reg_[order_[cursor_++]], false});
  }
  return out;
}

std::vector<ConceptExample> dataset_from_json_text(std::string_view text) {
  std::vector<ConceptExample> out;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_array()) fail(ErrorCode::InvalidInput, "dataset: top level must be an array");
    for (const auto& e : j) {
      for (const auto& [key, _] : e.items()) {
        if (key != "caption" && key != "width" && key != "height" && key != "pixels") {
          fail(ErrorCode::InvalidInput, "dataset: unknown key '" + key + "'");
        }
      }
      const auto w = e.at("width").get<std::size_t>();
      const auto h = e.at("height").get<std::size_t>();
      auto px = e.at("pixels").get<std::vector<double>>();
      if (px.size() != w * h) fail(ErrorCode::InvalidInput, "dataset: pixel count does not match width*height");
      for (double v : px) {
        if (!(v >= -1.0 && v <= 1.0)) fail(ErrorCode::InvalidInput, "dataset: pixel outside [-1, 1]");
      }
      out.push_back(ConceptExample{Matrix(h, w, std::move(px)), e.at("caption").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidInput, std::string("dataset: ") + e.what());
  }
  return out;
}

std::string dataset_to_json_text(std::span<const ConceptExample> examples) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& ex : examples) {
    j.push_back({{"caption", ex.caption},
                 {"width", ex.image.cols()},
                 {"height", ex.image.rows()},
                 {"pixels", ex.image.values()}});
  }
  return j.dump();
}

std::vector<ConceptExample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open dataset " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return dataset_from_json_text(ss.str());
}

void save_dataset(const std::string& path, std::span<const ConceptExample> examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write dataset " + path);
  out << dataset_to_json_text(examples);
}

}  // namespace cdiff
