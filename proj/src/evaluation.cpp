// SPDX-License-Identifier: Apache-2.0
#include "customdiff/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "customdiff/error.hpp"
#include "customdiff/linalg.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

namespace {

void normalize(FeatureVec& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

}  // namespace

ReferenceFeaturizer ReferenceFeaturizer::build(const Vocabulary& vocab, std::size_t pixels,
                                               std::size_t dim, std::uint64_t seed,
                                               std::span<const ConceptExample> calibration) {
  if (pixels == 0 || dim == 0) fail(ErrorCode::InvalidInput, "featurizer: zero dimension");
  ReferenceFeaturizer f;
  Rng rng(seed);
  f.image_proj_ = gaussian(dim, pixels, rng, 1.0 / std::sqrt(static_cast<double>(pixels)));
  f.image_bias_.resize(dim);
  std::normal_distribution<double> bias(0.0, 0.1);
  for (double& b : f.image_bias_) b = bias(rng);
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i == vocab.start_token()) continue;
    const auto row = vocab.embedding(i);
    f.words_.emplace(vocab.tokens()[i], std::vector<double>(row.begin(), row.end()));
  }

  const std::size_t td = vocab.dim();
  f.text_proj_ = gaussian(dim, td + 1, rng, 1.0 / std::sqrt(static_cast<double>(td)));

  std::vector<const ConceptExample*> usable;
  for (const auto& ex : calibration)
    if (!split_words(ex.caption).empty()) usable.push_back(&ex);
  if (!usable.empty()) {
    // Ridge fit of [pooled caption, 1] -> image feature.
    Matrix x(usable.size(), td + 1);
    Matrix y(usable.size(), dim);
    for (std::size_t r = 0; r < usable.size(); ++r) {
      const auto words = split_words(usable[r]->caption);
      for (const auto& w : words) {
        auto it = f.words_.find(w);
        if (it == f.words_.end()) fail(ErrorCode::UnknownToken, "featurizer: unknown token '" + w + "'");
        for (std::size_t k = 0; k < td; ++k) x(r, k) += it->second[k] / static_cast<double>(words.size());
      }
      x(r, td) = 1.0;
      const FeatureVec target = f.image_feature(usable[r]->image);
      std::copy(target.begin(), target.end(), y.row(r).begin());
    }
    f.text_proj_ = linalg::solve_ridge(x, y, 1e-3 * static_cast<double>(usable.size())).transposed();
  }
  return f;
}

FeatureVec ReferenceFeaturizer::image_feature(const Matrix& image) const {
  if (image.size() != image_proj_.cols()) {
    fail(ErrorCode::InvalidInput, "featurizer: image has " + std::to_string(image.size()) +
                                      " pixels, expected " + std::to_string(image_proj_.cols()));
  }
  double mean = 0.0;
  for (double v : image.data()) mean += v;
  mean /= static_cast<double>(image.size());
  FeatureVec out(dim());
  for (std::size_t k = 0; k < dim(); ++k) {
    double s = image_bias_[k];
    const auto row = image_proj_.row(k);
    for (std::size_t i = 0; i < image.size(); ++i) s += row[i] * (image[i] - mean);
    out[k] = std::tanh(s);
  }
  normalize(out);
  return out;
}

std::vector<FeatureVec> ReferenceFeaturizer::image_features(std::span<const Matrix> images) const {
  std::vector<FeatureVec> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(image_feature(img));
  return out;
}

FeatureVec ReferenceFeaturizer::text_feature(std::string_view caption) const {
  const auto words = split_words(caption);
  if (words.empty()) fail(ErrorCode::InvalidInput, "featurizer: empty caption");
  const std::size_t td = text_proj_.cols() - 1;
  std::vector<double> pooled(td + 1, 0.0);
  for (const auto& w : words) {
    auto it = words_.find(w);
    if (it == words_.end()) fail(ErrorCode::UnknownToken, "featurizer: unknown token '" + w + "'");
    for (std::size_t k = 0; k < td; ++k) pooled[k] += it->second[k] / static_cast<double>(words.size());
  }
  pooled[td] = 1.0;
  FeatureVec out(dim());
  for (std::size_t k = 0; k < dim(); ++k) out[k] = dot(text_proj_.row(k), pooled);
  normalize(out);
  return out;
}

double image_alignment(std::span<const Matrix> generated, std::span<const Matrix> targets,
                       const ReferenceFeaturizer& feat, AlignmentMode mode) {
  if (generated.empty() || targets.empty()) fail(ErrorCode::InvalidInput, "image_alignment: empty input");
  const auto tf = feat.image_features(targets);
  double total = 0.0;
  for (const auto& g : generated) {
    const FeatureVec gf = feat.image_feature(g);
    double acc = mode == AlignmentMode::Max ? -1.0 : 0.0;
    for (const auto& t : tf) {
      const double c = dot(gf, t);
      acc = mode == AlignmentMode::Max ? std::max(acc, c) : acc + c;
    }
    total += mode == AlignmentMode::Max ? acc : acc / static_cast<double>(tf.size());
  }
  return total / static_cast<double>(generated.size());
}

double text_alignment(std::span<const Matrix> generated, std::string_view prompt,
                      const Vocabulary& vocab, const ReferenceFeaturizer& feat) {
  if (generated.empty()) fail(ErrorCode::InvalidInput, "text_alignment: no images");
  const std::string stripped = strip_modifiers(vocab, prompt);
  if (split_words(stripped).empty()) fail(ErrorCode::InvalidInput, "text_alignment: prompt is empty after removing modifiers");
  const FeatureVec tf = feat.text_feature(stripped);
  double total = 0.0;
  for (const auto& g : generated) total += dot(feat.image_feature(g), tf);
  return total / static_cast<double>(generated.size());
}

double kid(std::span<const FeatureVec> x, std::span<const FeatureVec> y) {
  if (x.size() < 2 || y.size() < 2) fail(ErrorCode::InvalidInput, "kid: need at least two samples per side");
  const std::size_t dim = x.front().size();
  for (const auto& v : x)
    if (v.size() != dim) fail(ErrorCode::InvalidInput, "kid: inconsistent feature length");
  for (const auto& v : y)
    if (v.size() != dim) fail(ErrorCode::InvalidInput, "kid: inconsistent feature length");
  const double inv = 1.0 / static_cast<double>(dim);
  auto k = [inv](const FeatureVec& a, const FeatureVec& b) {
    const double s = dot(a, b) * inv + 1.0;
    return s * s * s;
  };
  const double m = static_cast<double>(x.size());
  const double n = static_cast<double>(y.size());
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) kxx += k(x[i], x[j]);
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = i + 1; j < y.size(); ++j) kyy += k(y[i], y[j]);
  // Cross terms accumulated as a symmetric sum so kid(x, y) == kid(y, x) bit for bit.
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) kxy += k(x[i], y[j]);
  double kyx = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) kyx += k(y[j], x[i]);
  const double within = 2.0 * kxx / (m * (m - 1.0)) + 2.0 * kyy / (n * (n - 1.0));
  return within - (kxy + kyx) / (m * n);
}

std::string MetricReport::to_json_text() const {
  nlohmann::json j;
  j["text_alignment"] = text_alignment;
  j["image_alignment"] = image_alignment;
  j["kid_x1000"] = kid * 1000.0;
  j["n"] = sample_count;
  return j.dump(2);
}

}  // namespace cdiff
