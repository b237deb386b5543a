// SPDX-License-Identifier: Apache-2.0
#include "customdiff/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "customdiff/error.hpp"
#include "customdiff/random.hpp"

namespace cdiff {

Vocabulary::Vocabulary(std::vector<std::string> tokens, std::map<std::string, std::size_t> counts,
                       std::size_t dim, std::uint64_t seed)
    : tokens_(std::move(tokens)), counts_(std::move(counts)), seed_(seed) {
  if (dim == 0) fail(ErrorCode::InvalidInput, "vocabulary: dim must be positive");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) fail(ErrorCode::InvalidInput, "vocabulary: empty token");
    if (!index_.emplace(tokens_[i], i).second) {
      fail(ErrorCode::InvalidInput, "vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
  auto it = index_.find(kStartToken);
  if (it == index_.end()) fail(ErrorCode::InvalidInput, "vocabulary: missing start token <start>");
  start_ = it->second;
  for (const auto& [tok, n] : counts_) {
    if (!index_.contains(tok)) fail(ErrorCode::InvalidInput, "vocabulary: count for unknown token '" + tok + "'");
  }
  Rng rng(seed);
  embeddings_ = gaussian(tokens_.size(), dim, rng);
}

Vocabulary Vocabulary::from_json_text(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidInput, std::string("vocabulary: invalid JSON: ") + e.what());
  }
  for (const auto& [key, _] : j.items()) {
    if (key != "tokens" && key != "counts" && key != "dim" && key != "seed") {
      fail(ErrorCode::InvalidInput, "vocabulary: unknown key '" + key + "'");
    }
  }
  try {
    auto tokens = j.at("tokens").get<std::vector<std::string>>();
    std::map<std::string, std::size_t> counts;
    if (j.contains("counts")) counts = j.at("counts").get<std::map<std::string, std::size_t>>();
    return Vocabulary(std::move(tokens), std::move(counts), j.at("dim").get<std::size_t>(),
                      j.value("seed", std::uint64_t{0}));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidInput, std::string("vocabulary: ") + e.what());
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open vocabulary file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string Vocabulary::to_json_text() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["counts"] = counts_;
  j["dim"] = dim();
  j["seed"] = seed_;
  return j.dump(1);
}

std::size_t Vocabulary::count(std::size_t index) const {
  auto it = counts_.find(tokens_.at(index));
  return it == counts_.end() ? 0 : it->second;
}

std::span<const double> Vocabulary::embedding(std::size_t index) const {
  if (index >= tokens_.size()) fail(ErrorCode::InvalidInput, "token index " + std::to_string(index) + " out of range");
  return embeddings_.row(index);
}

void Vocabulary::set_embedding(std::size_t index, std::span<const double> values) {
  if (index >= tokens_.size() || values.size() != dim()) {
    fail(ErrorCode::InvalidInput, "set_embedding: bad index or width");
  }
  std::copy(values.begin(), values.end(), embeddings_.row(index).begin());
}

void Vocabulary::set_embeddings(Matrix table) {
  if (table.rows() != tokens_.size() || table.cols() != dim()) {
    fail(ErrorCode::InvalidInput, "set_embeddings: table shape does not match the vocabulary");
  }
  embeddings_ = std::move(table);
}

std::optional<std::size_t> Vocabulary::lookup(std::string_view word) const {
  if (auto a = aliases_.find(std::string(word)); a != aliases_.end()) return a->second;
  if (auto it = index_.find(word); it != index_.end()) return it->second;
  return std::nullopt;
}

std::string Vocabulary::surface(std::size_t index) const {
  for (const auto& [alias, idx] : aliases_)
    if (idx == index) return alias;
  return tokens_.at(index);
}

void Vocabulary::add_alias(std::string alias, std::size_t index) {
  if (index >= tokens_.size()) fail(ErrorCode::InvalidInput, "alias target out of range");
  if (index_.contains(alias)) fail(ErrorCode::InvalidInput, "alias '" + alias + "' shadows a vocabulary token");
  if (auto it = aliases_.find(alias); it != aliases_.end() && it->second != index) {
    fail(ErrorCode::InvalidInput, "alias '" + alias + "' already bound to another token");
  }
  for (const auto& [a, idx] : aliases_) {
    if (idx == index && a != alias) {
      fail(ErrorCode::InvalidInput, "token '" + tokens_[index] + "' already carries alias '" + a + "'");
    }
  }
  aliases_[std::move(alias)] = index;
}

bool Vocabulary::is_alias(std::string_view word) const { return aliases_.contains(std::string(word)); }

std::vector<std::string> split_words(std::string_view caption) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : caption) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

TokenSeq tokenize(const Vocabulary& vocab, std::string_view caption) {
  TokenSeq seq{vocab.start_token()};
  for (const auto& w : split_words(caption)) {
    auto idx = vocab.lookup(w);
    if (!idx) fail(ErrorCode::UnknownToken, "unknown token '" + w + "'");
    seq.push_back(*idx);
  }
  return seq;
}

std::string detokenize(const Vocabulary& vocab, const TokenSeq& seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i == 0 && seq[i] == vocab.start_token()) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.surface(seq[i]);
  }
  return out;
}

std::size_t select_rare_token(const Vocabulary& vocab, const std::set<std::size_t>& exclude) {
  const auto& toks = vocab.tokens();
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (exclude.contains(i) || i == vocab.start_token()) continue;
    const std::size_t n = vocab.count(i);
    if (n < 5 || n > 10) continue;
    const std::string& s = toks[i];
    if (!std::all_of(s.begin(), s.end(), [](char ch) { return std::isalpha(static_cast<unsigned char>(ch)); })) {
      continue;
    }
    bool substring = false;
    for (std::size_t j = 0; j < toks.size() && !substring; ++j) {
      if (j != i && toks[j].find(s) != std::string::npos) substring = true;
    }
    if (!substring) return i;
  }
  fail(ErrorCode::NoRareToken, "no token with 5-10 occurrences, alphabetic, and not a substring of another token");
}

ModifierToken register_modifier(Vocabulary& vocab, std::string surface) {
  std::set<std::size_t> used;
  for (const auto& [alias, idx] : vocab.aliases()) used.insert(idx);
  const std::size_t idx = select_rare_token(vocab, used);
  vocab.add_alias(surface, idx);
  const auto row = vocab.embedding(idx);
  return ModifierToken{std::move(surface), idx, std::vector<double>(row.begin(), row.end()), true};
}

void install_modifier(Vocabulary& vocab, const ModifierToken& token) {
  vocab.add_alias(token.surface, token.token_index);
  vocab.set_embedding(token.token_index, token.embedding);
}

ModifierToken place_modifier(Vocabulary& vocab, ModifierToken token) {
  std::set<std::size_t> taken;
  for (const auto& [alias, idx] : vocab.aliases()) {
    if (alias == token.surface) fail(ErrorCode::InvalidInput, "modifier '" + token.surface + "' is already installed");
    taken.insert(idx);
  }
  if (taken.count(token.token_index)) token.token_index = select_rare_token(vocab, taken);
  install_modifier(vocab, token);
  return token;
}

Matrix encode_caption(const Vocabulary& vocab, const TokenSeq& seq) {
  Matrix c(seq.size(), vocab.dim());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (seq[i] >= vocab.size()) fail(ErrorCode::InvalidInput, "encode_caption: token index out of range");
    const auto row = vocab.embedding(seq[i]);
    std::copy(row.begin(), row.end(), c.row(i).begin());
  }
  return c;
}

std::string template_prompt(std::string_view category, const ModifierToken* modifier,
                            std::optional<std::string_view> size_suffix) {
  std::string out = "photo of a ";
  if (modifier) out += modifier->surface + " ";
  out += category;
  if (size_suffix && !size_suffix->empty()) {
    out += " ";
    out += *size_suffix;
  }
  return out;
}

std::string strip_modifiers(const Vocabulary& vocab, std::string_view caption) {
  std::string out;
  for (const auto& w : split_words(caption)) {
    if (vocab.is_alias(w)) continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace cdiff
