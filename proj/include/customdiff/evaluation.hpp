// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "customdiff/data.hpp"
#include "customdiff/matrix.hpp"
#include "customdiff/text.hpp"

namespace cdiff {

using FeatureVec = std::vector<double>;

/// Frozen embedder shared by all metrics. Images go through a fixed random
/// projection of the mean-centred pixels followed by tanh; captions are
/// mean-pooled token embeddings mapped linearly into the same space. Both
/// outputs are unit-norm. The text map is fitted once, at construction, on
/// calibration (caption, image) pairs so that a caption lands near the
/// images it describes; with no calibration data it stays random.
class ReferenceFeaturizer {
 public:
  static ReferenceFeaturizer build(const Vocabulary& vocab, std::size_t pixels, std::size_t dim,
                                   std::uint64_t seed,
                                   std::span<const ConceptExample> calibration = {});

  std::size_t dim() const noexcept { return image_proj_.rows(); }
  FeatureVec image_feature(const Matrix& image) const;
  std::vector<FeatureVec> image_features(std::span<const Matrix> images) const;
  /// Words must belong to the frozen vocabulary; strip modifiers first.
  FeatureVec text_feature(std::string_view caption) const;

 private:
  Matrix image_proj_;
  std::vector<double> image_bias_;
  Matrix text_proj_;  // dim × (text_dim + 1)
  std::map<std::string, std::vector<double>, std::less<>> words_;
};

enum class AlignmentMode { Mean, Max };

/// Mean over generated images of the mean (or max) cosine to the targets.
double image_alignment(std::span<const Matrix> generated, std::span<const Matrix> targets,
                       const ReferenceFeaturizer& feat, AlignmentMode mode = AlignmentMode::Mean);

/// Mean cosine between image features and the prompt's text feature, with
/// modifier tokens removed from the prompt.
double text_alignment(std::span<const Matrix> generated, std::string_view prompt,
                      const Vocabulary& vocab, const ReferenceFeaturizer& feat);

/// Unbiased squared MMD with the cubic polynomial kernel (aᵀb/dim + 1)³.
double kid(std::span<const FeatureVec> x, std::span<const FeatureVec> y);

struct MetricReport {
  double text_alignment = 0.0;
  double image_alignment = 0.0;
  double kid = 0.0;
  std::size_t sample_count = 0;

  /// {"text_alignment", "image_alignment", "kid_x1000", "n"}
  std::string to_json_text() const;
};

}  // namespace cdiff
