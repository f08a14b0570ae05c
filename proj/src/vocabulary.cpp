// SPDX-License-Identifier: Apache-2.0
#include "cocite/vocabulary.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "cocite/tensor.hpp"

namespace cocite {

Vocabulary::Vocabulary() {
  for (const char* t : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) add_token(t);
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, std::span<const std::string> domains,
                             std::size_t max_size) {
  Vocabulary vocab;
  for (const auto& d : domains) vocab.register_domain(d);
  if (max_size < vocab.size()) {
    throw ConfigError("vocabulary cap " + std::to_string(max_size) + " smaller than the " +
                      std::to_string(vocab.size()) + " reserved and domain tokens");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& text : corpus) {
    for (auto& w : split_words(text)) ++counts[std::move(w)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [word, count] : ranked) {
    if (vocab.size() >= max_size) break;
    if (!vocab.find(word)) vocab.add_token(word);
  }
  return vocab;
}

TokenId Vocabulary::add_token(const std::string& token) {
  if (auto existing = find(token)) return *existing;
  auto id = static_cast<TokenId>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

TokenId Vocabulary::register_domain(const std::string& domain) {
  if (domain.empty()) throw ConfigError("domain name must be non-empty");
  if (auto id = domain_token_id(domain)) return *id;
  const auto token = domain_token(domain);
  if (find(token)) throw ConfigError("domain token " + token + " collides with an existing token");
  domains_.push_back(domain);
  return add_token(token);
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id_or_unk(std::string_view word) const { return find(word).value_or(kUnk); }

std::optional<TokenId> Vocabulary::domain_token_id(std::string_view domain) const {
  if (std::find(domains_.begin(), domains_.end(), domain) == domains_.end()) return std::nullopt;
  return find(domain_token(domain));
}

bool Vocabulary::is_special(TokenId id) const {
  if (id <= kSep) return true;
  const auto& t = token(id);
  return std::any_of(domains_.begin(), domains_.end(), [&](const auto& d) { return domain_token(d) == t; });
}

std::string Vocabulary::domain_token(std::string_view domain) {
  std::string out = "[";
  for (char c : domain) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  out.push_back(']');
  return out;
}

void to_json(nlohmann::json& j, const Vocabulary& v) {
  j = nlohmann::json{{"tokens", v.tokens()}, {"domains", v.domains()}};
}

void from_json(const nlohmann::json& j, Vocabulary& v) {
  const auto tokens = j.at("tokens").get<std::vector<std::string>>();
  const auto domains = j.at("domains").get<std::vector<std::string>>();
  const Vocabulary reserved;
  if (tokens.size() < reserved.size() ||
      !std::equal(reserved.tokens().begin(), reserved.tokens().end(), tokens.begin())) {
    throw DataError("vocabulary does not start with the reserved tokens");
  }
  Vocabulary out;
  for (std::size_t i = reserved.size(); i < tokens.size(); ++i) {
    if (out.find(tokens[i])) throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    out.add_token(tokens[i]);
  }
  for (const auto& d : domains) {
    if (!out.find(Vocabulary::domain_token(d))) throw DataError("domain '" + d + "' has no token in the vocabulary");
    out.domains_.push_back(d);
  }
  v = std::move(out);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && std::ispunct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string w(text.substr(b, e - b));
      for (auto& c : w) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      words.push_back(std::move(w));
    }
    i = j;
  }
  return words;
}

std::size_t TokenSequence::real_length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

TokenSequence TokenSequence::trimmed() const {
  std::size_t n = ids.size();
  while (n > 0 && mask[n - 1] == 0) --n;
  return TokenSequence{{ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)},
                       {mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(n)}};
}

TokenSequence tokenize(std::string_view text, std::optional<std::string_view> domain, const Vocabulary& vocab,
                       std::size_t max_len) {
  if (max_len == 0) throw ConfigError("max sequence length must be >= 1");
  TokenId first = Vocabulary::kCls;
  if (domain) {
    auto id = vocab.domain_token_id(*domain);
    if (!id) throw ConfigError("domain '" + std::string(*domain) + "' has no registered token");
    first = *id;
  }
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(first);
  for (const auto& w : split_words(text)) {
    if (seq.ids.size() >= max_len) break;
    seq.ids.push_back(vocab.id_or_unk(w));
  }
  seq.mask.assign(seq.ids.size(), 1);
  seq.ids.resize(max_len, Vocabulary::kPad);
  seq.mask.resize(max_len, 0);
  return seq;
}

}  // namespace cocite
