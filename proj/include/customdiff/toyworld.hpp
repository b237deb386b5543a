// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "customdiff/data.hpp"
#include "customdiff/random.hpp"
#include "customdiff/text.hpp"

// Procedural 8×8 world used as bundled fixture data: a handful of shape
// categories with per-sample jitter, two personal "instances" that differ
// from their category's usual look, and a closed word-level vocabulary.
namespace cdiff::toy {

inline constexpr std::size_t kImageSize = 8;

/// Categories the base model is pretrained on.
const std::vector<std::string>& categories();
/// Filler adjectives mixed into pretraining captions; they carry no signal.
const std::vector<std::string>& adjectives();

/// One random instance of a category (or "a and b" composition).
Matrix render_category(std::string_view category, Rng& rng);

/// Personal concepts: "spotted_dog" (category dog) and "ringed_moon"
/// (category moon).
Matrix render_instance(std::string_view instance, Rng& rng);
std::string instance_category(std::string_view instance);

/// Random pretraining pair; caption is empty with probability `dropout`.
ConceptExample pretrain_example(Rng& rng, double dropout);

/// `count` images of a personal instance captioned "photo of a {modifier} {category}".
std::vector<ConceptExample> instance_images(std::string_view instance, std::string_view modifier,
                                            std::size_t count, std::uint64_t seed);

/// Local caption pool standing in for web-scale retrieval.
std::vector<ConceptExample> caption_pool(std::size_t per_category, std::uint64_t seed);

/// Real images of a bare category (validation / reference distribution).
std::vector<ConceptExample> category_images(std::string_view category, std::size_t count,
                                            std::uint64_t seed);

/// Plain captions for the closed-form merge regularizer.
std::vector<std::string> regularization_captions(std::size_t count, std::uint64_t seed);

/// The closed ~200-word vocabulary with synthetic corpus counts.
Vocabulary make_vocabulary(std::size_t dim, std::uint64_t seed);

}  // namespace cdiff::toy
