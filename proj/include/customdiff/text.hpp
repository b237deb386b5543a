// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "customdiff/matrix.hpp"

namespace cdiff {

using TokenSeq = std::vector<std::size_t>;

inline constexpr std::string_view kStartToken = "<start>";

/// Word-level vocabulary with an embedding table and corpus counts.
/// Modifier tokens are surface aliases onto rare-token rows.
class Vocabulary {
 public:
  Vocabulary() = default;
  /// Embeddings drawn N(0, 1) from `seed`; tokens must be unique and
  /// contain the start token.
  Vocabulary(std::vector<std::string> tokens, std::map<std::string, std::size_t> counts,
             std::size_t dim, std::uint64_t seed);

  /// Parses {"tokens": [...], "counts": {...}, "dim": d, "seed": s}.
  static Vocabulary from_json_text(std::string_view text);
  static Vocabulary load(const std::string& path);
  std::string to_json_text() const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::size_t dim() const noexcept { return embeddings_.cols(); }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t start_token() const noexcept { return start_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::map<std::string, std::size_t>& counts() const noexcept { return counts_; }
  std::size_t count(std::size_t index) const;

  const Matrix& embeddings() const noexcept { return embeddings_; }
  std::span<const double> embedding(std::size_t index) const;
  void set_embedding(std::size_t index, std::span<const double> values);
  void set_embeddings(Matrix table);

  std::optional<std::size_t> lookup(std::string_view word) const;
  /// Surface string for an index: its alias when one is registered.
  std::string surface(std::size_t index) const;

  void add_alias(std::string alias, std::size_t index);
  const std::map<std::string, std::size_t>& aliases() const noexcept { return aliases_; }
  bool is_alias(std::string_view word) const;

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> counts_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::map<std::string, std::size_t> aliases_;
  Matrix embeddings_;
  std::size_t start_ = 0;
  std::uint64_t seed_ = 0;
};

/// A trainable concept token (V*). `token_index` is the rare vocabulary row
/// the surface string aliases; `embedding` is its current value.
struct ModifierToken {
  std::string surface;
  std::size_t token_index = 0;
  std::vector<double> embedding;
  bool trainable = true;
};

std::vector<std::string> split_words(std::string_view caption);

/// [start_token] followed by one index per whitespace-separated word.
TokenSeq tokenize(const Vocabulary& vocab, std::string_view caption);
std::string detokenize(const Vocabulary& vocab, const TokenSeq& seq);

/// Lowest-index token with corpus count in [5, 10], purely alphabetic, and
/// not a substring of any other token. NoRareToken when none qualifies.
std::size_t select_rare_token(const Vocabulary& vocab, const std::set<std::size_t>& exclude = {});

/// Registers `surface` as an alias of a freshly selected rare token whose
/// embedding becomes the modifier's initial value.
ModifierToken register_modifier(Vocabulary& vocab, std::string surface);

/// Re-installs a previously trained modifier (alias and embedding row).
void install_modifier(Vocabulary& vocab, const ModifierToken& token);

/// Like install_modifier, but moves the modifier to another free rare row
/// when its row already carries a different alias. Only the trained
/// embedding matters, so the move is lossless. Returns the installed token.
ModifierToken place_modifier(Vocabulary& vocab, ModifierToken token);

/// Row i is the embedding of token i.
Matrix encode_caption(const Vocabulary& vocab, const TokenSeq& seq);

/// "photo of a [V*] category[ suffix]"
std::string template_prompt(std::string_view category, const ModifierToken* modifier = nullptr,
                            std::optional<std::string_view> size_suffix = std::nullopt);

/// Caption with every registered modifier alias removed.
std::string strip_modifiers(const Vocabulary& vocab, std::string_view caption);

}  // namespace cdiff
