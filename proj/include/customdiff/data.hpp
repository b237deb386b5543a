// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "customdiff/matrix.hpp"
#include "customdiff/pipeline.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

struct ConceptExample {
  Matrix image;  // H×W, values in [-1, 1]
  std::string caption;
};

enum class RegSource { Retrieved, Generated };

struct RegularizationSet {
  std::vector<ConceptExample> examples;
  RegSource source = RegSource::Retrieved;
  std::string target_caption;
};

struct AugmentedSample {
  Matrix image;
  std::string caption;
  Matrix valid_mask;  // 1 where the resized target covers the canvas
  double ratio = 1.0;
};

/// Maps a caption into a feature space where cosine similarity is meaningful.
using TextFeaturizer = std::function<std::vector<double>(std::string_view)>;

double cosine(std::span<const double> a, std::span<const double> b);

/// Pool entries whose caption cosine to `target_caption` is at least
/// `threshold`, best first, truncated to `cap`. Ties break on caption, then
/// pixels, so the result does not depend on pool order. Throws
/// EmptyRegularizationSet when nothing qualifies.
RegularizationSet retrieve_regularization(std::span<const ConceptExample> pool,
                                          std::string_view target_caption, double threshold,
                                          std::size_t cap, const TextFeaturizer& featurizer);

/// `count` samples of "photo of a {category}" from the pretrained model.
RegularizationSet generate_regularization(const Pipeline& model, std::string_view category,
                                          std::size_t count, std::uint64_t seed,
                                          SamplerOptions opts = {});

/// Random resize: one time in three up-scaled by 1.2-1.4 and center-cropped
/// ("zoomed in" / "close up"), otherwise shrunk by 0.4-1.0 and pasted on a
/// zero canvas ("far away" / "very small" below 0.6).
AugmentedSample augment(const ConceptExample& sample, Rng& rng);
/// Same transform at a fixed ratio; the rng only picks the suffix wording.
AugmentedSample augment_with_ratio(const ConceptExample& sample, double ratio, Rng& rng);

struct BatchItem {
  ConceptExample example;
  bool is_target = true;
};

/// Endless stream of batches that are half target, half regularization.
/// Targets are drawn with replacement (oversampled); regularization
/// examples are visited in reshuffled epochs.
class BalancedBatches {
 public:
  BalancedBatches(std::vector<ConceptExample> target, const RegularizationSet* reg,
                  std::size_t batch, std::uint64_t seed);
  std::vector<BatchItem> next();

 private:
  std::vector<ConceptExample> target_;
  std::vector<ConceptExample> reg_;
  std::size_t batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

std::vector<ConceptExample> dataset_from_json_text(std::string_view text);
std::string dataset_to_json_text(std::span<const ConceptExample> examples);
std::vector<ConceptExample> load_dataset(const std::string& path);
void save_dataset(const std::string& path, std::span<const ConceptExample> examples);

}  // namespace cdiff
