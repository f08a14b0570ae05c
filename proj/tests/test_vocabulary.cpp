// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "cocite/vocabulary.hpp"
#include "support.hpp"

using namespace cocite;

TEST_SUITE("vocabulary") {
  TEST_CASE("reserved ids come first and domain tokens are distinct") {
    const auto v = test_support::toy_vocabulary();
    CHECK(v.token(Vocabulary::kPad) == "[PAD]");
    CHECK(v.token(Vocabulary::kUnk) == "[UNK]");
    CHECK(v.token(Vocabulary::kCls) == "[CLS]");
    CHECK(v.token(Vocabulary::kSep) == "[SEP]");
    const auto cvd = v.domain_token_id("cvd");
    const auto copd = v.domain_token_id("copd");
    REQUIRE(cvd);
    REQUIRE(copd);
    CHECK(*cvd != *copd);
    CHECK(v.token(*cvd) == "[CVD]");
    CHECK(v.is_special(*cvd));
    CHECK_FALSE(v.is_special(*v.find("lung")));
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v.find(v.token(static_cast<TokenId>(i))) == static_cast<TokenId>(i));
  }

  TEST_CASE("words are ordered by frequency then alphabetically") {
    const std::vector<std::string> corpus = {"b a c", "a b", "a"};
    const auto v = Vocabulary::build(corpus, {}, 100);
    CHECK(v.token(4) == "a");
    CHECK(v.token(5) == "b");
    CHECK(v.token(6) == "c");
    const auto capped = Vocabulary::build(corpus, {}, 6);
    CHECK(capped.size() == 6);
    CHECK(capped.id_or_unk("c") == Vocabulary::kUnk);
  }

  TEST_CASE("split_words lowercases and strips punctuation") {
    const auto w = split_words("Heart-failure, (HFpEF) patients.  ");
    REQUIRE(w.size() == 3);
    CHECK(w[0] == "heart-failure");
    CHECK(w[1] == "hfpef");
    CHECK(w[2] == "patients");
  }

  TEST_CASE("domain token replaces [CLS] at position 0") {
    const auto v = test_support::toy_vocabulary();
    const auto s = tokenize("heart disease", std::string_view("cvd"), v, 8);
    CHECK(s.ids[0] == *v.domain_token_id("cvd"));
    CHECK(s.ids[1] == *v.find("heart"));
    CHECK(s.ids[2] == Vocabulary::kUnk);
    CHECK(s.real_length() == 3);
  }

  TEST_CASE("empty text gives [CLS] and padding") {
    const auto v = test_support::toy_vocabulary();
    const auto s = tokenize("", std::nullopt, v, 5);
    CHECK(s.ids == std::vector<TokenId>{Vocabulary::kCls, 0, 0, 0, 0});
    CHECK(s.mask == std::vector<std::uint8_t>{1, 0, 0, 0, 0});
    CHECK(s.trimmed().length() == 1);
  }

  TEST_CASE("sequences have exactly max_len entries") {
    const auto v = test_support::toy_vocabulary();
    for (const char* text : {"lung", "heart failure risk in older adults and more words here"}) {
      const auto s = tokenize(text, std::nullopt, v, 4);
      CHECK(s.length() == 4);
      CHECK(s.mask.size() == 4);
    }
  }

  TEST_CASE("unknown domain is reported by name") {
    const auto v = test_support::toy_vocabulary();
    try {
      (void)tokenize("x", std::string_view("asthma"), v, 4);
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("asthma") != std::string::npos);
    }
  }

  TEST_CASE("json round trip preserves ids") {
    const auto v = test_support::toy_vocabulary();
    const nlohmann::json j = v;
    const auto back = j.get<Vocabulary>();
    CHECK(back == v);
    CHECK(back.domain_token_id("copd") == v.domain_token_id("copd"));
  }
}
