// SPDX-License-Identifier: Apache-2.0
#include "customdiff/toyworld.hpp"

#include <algorithm>
#include <cmath>

#include "customdiff/error.hpp"

namespace cdiff::toy {

namespace {

constexpr double kBackground = -1.0;
constexpr int N = static_cast<int>(kImageSize);

struct Canvas {
  Matrix img{kImageSize, kImageSize, kBackground};
  void paint(int i, int j, double v) {
    if (i < 0 || j < 0 || i >= N || j >= N) return;
    auto& p = img(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    p = std::max(p, v);
  }
};

int pick(Rng& rng, std::initializer_list<int> options) {
  const std::vector<int> v(options);
  return v[uniform_index(rng, v.size())];
}

void finish(Matrix& img, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 0.03);
  for (double& v : img.data()) v = std::clamp(v + noise(rng), -1.0, 1.0);
}

void draw_dog(Canvas& c, Rng& rng, double v) {
  const int r = pick(rng, {2, 3, 4});
  for (int i = r; i < r + 2; ++i)
    for (int j = 1; j <= 6; ++j) c.paint(i, j, v);
}

void draw_cat(Canvas& c, Rng& rng, double v) {
  const int col = pick(rng, {2, 3, 4});
  for (int i = 1; i <= 6; ++i)
    for (int j = col; j < col + 2; ++j) c.paint(i, j, v);
}

void draw_moon(Canvas& c, Rng& rng, double v) {
  const double cy = 3.5 + 0.5 * pick(rng, {-1, 0, 1});
  const double cx = 3.5 + 0.5 * pick(rng, {-1, 0, 1});
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < N; ++j)
      if (std::hypot(i - cy, j - cx) <= 2.4) c.paint(i, j, v);
}

void draw_gate(Canvas& c, Rng& rng, double v) {
  const int top = pick(rng, {1, 2});
  const int left = pick(rng, {1, 2});
  for (int k = 0; k < 5; ++k) {
    c.paint(top, left + k, v);
    c.paint(top + 4, left + k, v);
    c.paint(top + k, left, v);
    c.paint(top + k, left + 4, v);
  }
}

void draw_tree(Canvas& c, Rng& rng, double v) {
  const int dx = pick(rng, {-1, 0, 1});
  for (int i = 1; i <= 6; ++i) {
    const int half = (i - 1) / 2;
    for (int j = 3 - half; j <= 4 + half; ++j) c.paint(i, j + dx, v);
  }
}

void draw_house(Canvas& c, Rng& rng, double v) {
  const int dx = pick(rng, {-1, 0, 1});
  for (int i = 0; i < N; ++i) {
    c.paint(i, i + dx, v);
    c.paint(i, N - 1 - i + dx, v);
  }
}

void draw(Canvas& c, std::string_view category, Rng& rng) {
  const double v = uniform(rng, 0.75, 1.0);
  if (category == "dog") return draw_dog(c, rng, v);
  if (category == "cat") return draw_cat(c, rng, v);
  if (category == "moon") return draw_moon(c, rng, v);
  if (category == "gate") return draw_gate(c, rng, v);
  if (category == "tree") return draw_tree(c, rng, v);
  if (category == "house") return draw_house(c, rng, v);
  fail(ErrorCode::InvalidInput, "toy world: unknown category '" + std::string(category) + "'");
}

std::string random_caption(Rng& rng, const std::string& category, const std::string& second) {
  if (!second.empty()) return "photo of a " + category + " and a " + second;
  const auto& adj = adjectives();
  switch (std::uniform_int_distribution<int>(0, 4)(rng)) {
    case 0: return "photo of a " + category;
    case 1: return "a " + category;
    case 2: return "picture of a " + category;
    case 3: return "photo of a " + adj[uniform_index(rng, adj.size())] + " " + category;
    default: return "a " + adj[uniform_index(rng, adj.size())] + " " + category;
  }
}

std::pair<std::string, std::string> random_categories(Rng& rng, double pair_prob) {
  const auto& cats = categories();
  std::string a = cats[uniform_index(rng, cats.size())];
  std::string b;
  if (std::bernoulli_distribution(pair_prob)(rng)) {
    do {
      b = cats[uniform_index(rng, cats.size())];
    } while (b == a);
  }
  return {a, b};
}

}  // namespace

const std::vector<std::string>& categories() {
  static const std::vector<std::string> c{"dog", "cat", "moon", "gate", "tree", "house"};
  return c;
}

const std::vector<std::string>& adjectives() {
  static const std::vector<std::string> a{"nice", "cute", "big", "little", "old",
                                          "new", "happy", "lovely", "good", "real"};
  return a;
}

Matrix render_category(std::string_view category, Rng& rng) {
  Canvas c;
  const auto pos = category.find(" and ");
  if (pos != std::string_view::npos) {
    draw(c, category.substr(0, pos), rng);
    draw(c, category.substr(pos + 5), rng);
  } else {
    draw(c, category, rng);
  }
  finish(c.img, rng);
  return c.img;
}

Matrix render_instance(std::string_view instance, Rng& rng) {
  Canvas c;
  const double v = uniform(rng, 0.85, 1.0);
  if (instance == "spotted_dog") {
    // A full-width bar along the top edge with alternating dark spots.
    const int phase = pick(rng, {0, 1});
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < N; ++j) c.paint(i, j, (j + i + phase) % 2 == 0 ? v : -0.2);
  } else if (instance == "ringed_moon") {
    const double r = uniform(rng, 2.6, 3.0);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < N; ++j) {
        const double d = std::hypot(i - 3.5, j - 3.5);
        if (std::abs(d - r) <= 0.6 || d <= 0.8) c.paint(i, j, v);
      }
  } else {
    fail(ErrorCode::InvalidInput, "toy world: unknown instance '" + std::string(instance) + "'");
  }
  finish(c.img, rng);
  return c.img;
}

std::string instance_category(std::string_view instance) {
  if (instance == "spotted_dog") return "dog";
  if (instance == "ringed_moon") return "moon";
  fail(ErrorCode::InvalidInput, "toy world: unknown instance '" + std::string(instance) + "'");
}

ConceptExample pretrain_example(Rng& rng, double dropout) {
  auto [a, b] = random_categories(rng, 0.15);
  const std::string spec = b.empty() ? a : a + " and " + b;
  Matrix img = render_category(spec, rng);
  std::string caption = random_caption(rng, a, b);
  if (std::bernoulli_distribution(dropout)(rng)) caption.clear();
  return ConceptExample{std::move(img), std::move(caption)};
}

std::vector<ConceptExample> instance_images(std::string_view instance, std::string_view modifier,
                                            std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  const std::string caption = "photo of a " + std::string(modifier) + " " + instance_category(instance);
  std::vector<ConceptExample> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back({render_instance(instance, rng), caption});
  return out;
}

std::vector<ConceptExample> caption_pool(std::size_t per_category, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ConceptExample> out;
  for (const auto& cat : categories()) {
    for (std::size_t i = 0; i < per_category; ++i) {
      std::string second;
      if (std::bernoulli_distribution(0.15)(rng)) {
        do {
          second = categories()[uniform_index(rng, categories().size())];
        } while (second == cat);
      }
      const std::string spec = second.empty() ? cat : cat + " and " + second;
      Matrix img = render_category(spec, rng);
      out.push_back({std::move(img), random_caption(rng, cat, second)});
    }
  }
  return out;
}

std::vector<ConceptExample> category_images(std::string_view category, std::size_t count,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ConceptExample> out;
  const std::string caption = "photo of a " + std::string(category);
  for (std::size_t i = 0; i < count; ++i) out.push_back({render_category(category, rng), caption});
  return out;
}

std::vector<std::string> regularization_captions(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    auto [a, b] = random_categories(rng, 0.15);
    out.push_back(random_caption(rng, a, b));
  }
  return out;
}

Vocabulary make_vocabulary(std::size_t dim, std::uint64_t seed) {
  std::vector<std::string> tokens{"<start>"};
  std::map<std::string, std::size_t> counts;
  auto add = [&](const std::string& t, std::size_t n) {
    tokens.push_back(t);
    counts[t] = n;
  };
  for (const char* w : {"photo", "of", "a", "an", "the", "and", "with", "picture", "image", "in", "on"})
    add(w, 50000);
  for (const auto& c : categories()) add(c, 6000);
  add("cats", 900);
  for (const auto& a : adjectives()) add(a, 2500);
  for (const char* w : {"very", "small", "far", "away", "zoomed", "close", "up"}) add(w, 1500);
  static const char* const filler[] = {
      "apple", "river", "stone", "chair", "table", "window", "garden", "flower", "mountain",
      "beach", "forest", "city", "street", "bridge", "boat", "train", "plane", "bicycle", "clock",
      "lamp", "book", "bottle", "glass", "plate", "spoon", "fork", "knife", "shoe", "hat", "coat",
      "shirt", "dress", "ring", "necklace", "watch", "phone", "camera", "guitar", "piano", "drum",
      "violin", "ball", "kite", "toy", "doll", "teddybear", "plushy", "tortoise", "rabbit", "horse",
      "sheep", "goat", "pig", "duck", "goose", "owl", "eagle", "parrot", "fish", "shark", "whale",
      "frog", "snake", "lizard", "spider", "bee", "butterfly", "snail", "crab", "shell", "sand",
      "snow", "rain", "cloud", "sun", "star", "sky", "night", "morning", "evening", "autumn",
      "winter", "summer", "spring", "red", "blue", "green", "yellow", "purple", "orange", "pink",
      "brown", "black", "white", "gray", "golden", "silver", "wooden", "metal", "plastic",
      "painting", "sketch", "drawing", "sculpture", "statue", "temple", "castle", "tower", "wall",
      "door", "roof", "floor", "carpet", "pillow", "blanket", "bed", "sofa", "desk", "shelf",
      "basket", "bucket", "barrel", "pot", "vase", "candle", "mirror", "fence", "road", "path",
      "field", "farm", "lake", "pond", "island", "cave", "desert", "jungle", "valley", "hill",
      "cliff", "meadow", "harbor", "market", "museum", "library", "kitchen", "bathroom"};
  std::size_t k = 0;
  for (const char* w : filler) add(w, 20 + (k++ * 37) % 880);
  // Rare-token candidates. Only "sks", "ktn" and "vrox" satisfy every criterion.
  add("sks", 7);
  add("zyx", 3);
  add("qrv9", 6);
  add("pho", 8);
  add("ktn", 6);
  add("vrox", 9);
  add("mbq", 14);
  return Vocabulary(std::move(tokens), std::move(counts), dim, seed);
}

}  // namespace cdiff::toy
