#include <doctest.h>

#include "kinctx/common.hpp"
#include "kinctx/text.hpp"

using namespace kinctx;

TEST_CASE("tokenize splits words and punctuation") {
  const auto toks = tokenize("Horrific movie, don't see it.");
  std::vector<std::string> got;
  for (const auto& t : toks) got.push_back(t.text);
  CHECK(got == std::vector<std::string>{"Horrific", "movie", ",", "don", "'", "t", "see", "it", "."});
  CHECK(toks[1].span == Span{9, 14});
  CHECK(toks[1].is_word);
  CHECK_FALSE(toks[2].is_word);
}

TEST_CASE("tokenize keeps utf-8 bytes inside words") {
  const auto toks = token_strings("Gospić is here");
  REQUIRE(toks.size() == 3);
  CHECK(toks[0] == "Gospić");
}

TEST_CASE("token boundaries") {
  const std::string s = "comparison paris";
  CHECK(is_token_boundary(s, 0));
  CHECK_FALSE(is_token_boundary(s, 3));
  CHECK(is_token_boundary(s, 10));
  CHECK(is_token_boundary(s, 11));
  CHECK(is_token_boundary(s, s.size()));
}

TEST_CASE("string helpers") {
  CHECK(fold_case("PaRiS 42") == "paris 42");
  CHECK(trim("  a b \t") == "a b");
  CHECK(rtrim("ab  ") == "ab");
  CHECK(split("a,,b", ',') == std::vector<std::string>{"a", "", "b"});
  const std::vector<std::string> toks{"a", "b"};
  CHECK(join_tokens(toks) == "a b");
}

TEST_CASE("rng is reproducible and below() stays in range") {
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.below(13);
    CHECK(v < 13);
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK_THROWS_AS(r.below(0), Error);
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
}
