// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cocite {

using TokenId = std::int32_t;

/// Dense token<->id map. Ids 0..3 are always [PAD], [UNK], [CLS], [SEP];
/// domain tokens such as [CVD] are ordinary entries tracked separately.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;

  Vocabulary();

  /// Reserved tokens, one token per domain, then the most frequent words of
  /// `corpus` (ties broken lexicographically) until `max_size` entries exist.
  static Vocabulary build(std::span<const std::string> corpus, std::span<const std::string> domains,
                          std::size_t max_size);

  TokenId add_token(const std::string& token);
  TokenId register_domain(const std::string& domain);

  std::optional<TokenId> find(std::string_view token) const;
  TokenId id_or_unk(std::string_view word) const;
  std::optional<TokenId> domain_token_id(std::string_view domain) const;
  bool is_special(TokenId id) const;

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::string>& domains() const { return domains_; }
  std::size_t size() const { return tokens_.size(); }

  /// "cvd" -> "[CVD]".
  static std::string domain_token(std::string_view domain);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.domains_ == b.domains_;
  }

 private:
  friend void from_json(const nlohmann::json& j, Vocabulary& v);

  std::vector<std::string> tokens_;
  std::vector<std::string> domains_;
  std::unordered_map<std::string, TokenId> index_;
};

void to_json(nlohmann::json& j, const Vocabulary& v);
void from_json(const nlohmann::json& j, Vocabulary& v);

/// Whitespace split, lowercased, with surrounding ASCII punctuation stripped.
std::vector<std::string> split_words(std::string_view text);

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> mask;

  std::size_t length() const { return ids.size(); }
  std::size_t real_length() const;
  /// Copy with trailing padding removed.
  TokenSequence trimmed() const;
};

/// Position 0 holds the domain token when `domain` is given, otherwise [CLS].
/// The result is truncated or padded to exactly `max_len` positions.
TokenSequence tokenize(std::string_view text, std::optional<std::string_view> domain, const Vocabulary& vocab,
                       std::size_t max_len);

}  // namespace cocite
