// Copyright 2026 The xmcaug Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xmcaug/textsim.hpp"

#include <catch2/catch_amalgamated.hpp>

#include "xmcaug/common.hpp"
#include "support/oracles.hpp"

using namespace xmcaug;
using textsim::TokenSequence;

TEST_CASE("tokenize splits punctuation and lowercases") {
  CHECK(textsim::tokenize("Mad Max, Interceptor") ==
        TokenSequence{"mad", "max", ",", "interceptor"});
  CHECK(textsim::tokenize("") == TokenSequence{});
  CHECK(textsim::tokenize("A /SEP/ b") == TokenSequence{"a", "/SEP/", "b"});
  CHECK(textsim::tokenize("11.15 fl oz (330 ml)") ==
        TokenSequence{"11", ".", "15", "fl", "oz", "(", "330", "ml", ")"});
}

TEST_CASE("tokenize is idempotent on its joined output") {
  Rng rng(2024);
  const std::string alphabet = "abc XYZ,.!/09-'";
  for (int trial = 0; trial < 200; ++trial) {
    std::string s;
    const auto len = rng.bounded(40);
    for (std::uint64_t i = 0; i < len; ++i)
      s.push_back(alphabet[static_cast<std::size_t>(rng.bounded(alphabet.size()))]);
    const auto once = textsim::tokenize(s);
    const auto twice = textsim::tokenize(textsim::join_tokens(once));
    CHECK(once == twice);
  }
}

TEST_CASE("similarity_ratio basic cases", "[similarity]") {
  CHECK(textsim::similarity_ratio("abcd", "bcde") == 0.75);
  CHECK(textsim::similarity_ratio("same text", "same text") == 1.0);
  CHECK(textsim::similarity_ratio("aaaa", "bbbb") == 0.0);
  CHECK(textsim::similarity_ratio("", "") == 1.0);
  CHECK(textsim::similarity_ratio("", "x") == 0.0);
}

TEST_CASE("similarity_ratio matches the brute-force gestalt reference exactly") {
  Rng rng(7321);
  for (int trial = 0; trial < 600; ++trial) {
    const auto a = testsupport::random_string(rng, 30, "abcde");
    const auto b = testsupport::random_string(rng, 30, "abcde");
    INFO("a=" << a << " b=" << b);
    CHECK(textsim::similarity_ratio(a, b) == testsupport::brute_force_gestalt_ratio(a, b));
  }
}

TEST_CASE("similarity_upper_bound dominates the exact ratio") {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const auto a = testsupport::random_string(rng, 24, "abcdef");
    const auto b = testsupport::random_string(rng, 24, "abcdef");
    CHECK(textsim::similarity_upper_bound(a, b) >= textsim::similarity_ratio(a, b) - 1e-15);
  }
}

TEST_CASE("bleu identity and disjoint cases") {
  const TokenSequence c = {"a", "b", "c", "d", "e"};
  CHECK(textsim::bleu(c, c) == Catch::Approx(1.0).margin(1e-12));
  const TokenSequence d = {"x", "y", "z", "w"};
  CHECK(textsim::bleu(c, d) < 1e-6);  // floor-dominated
  CHECK(textsim::bleu({}, c) == 0.0);
}

TEST_CASE("bleu brevity-penalty example") {
  // candidate shorter than reference by one word, perfect precisions:
  // BP = exp(1 - 4/3), all p_n = 1 -> bleu = 0.71653131...
  const TokenSequence cand = {"a", "b", "c"};
  const TokenSequence ref = {"a", "b", "c", "d"};
  CHECK(textsim::bleu(cand, ref, 3) == Catch::Approx(0.7165313105737892).epsilon(1e-12));
}

TEST_CASE("bleu is invariant under bijective token renaming") {
  Rng rng(5150);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSequence cand, ref;
    const auto nc = 1 + rng.bounded(12);
    const auto nr = 1 + rng.bounded(12);
    for (std::uint64_t i = 0; i < nc; ++i)
      cand.push_back("w" + std::to_string(rng.bounded(6)));
    for (std::uint64_t i = 0; i < nr; ++i)
      ref.push_back("w" + std::to_string(rng.bounded(6)));
    auto rename = [](const TokenSequence& in) {
      TokenSequence out;
      for (const auto& t : in) out.push_back("relabeled_" + t);
      return out;
    };
    CHECK(textsim::bleu(cand, ref) == textsim::bleu(rename(cand), rename(ref)));
  }
}

TEST_CASE("bleu counts clipped n-gram matches") {
  // "the the the" vs "the cat": clipped unigram matches = 1 of 3.
  const TokenSequence cand = {"the", "the", "the"};
  const TokenSequence ref = {"the", "cat"};
  const double p1 = 1.0 / 3.0;
  const double expected =
      std::exp((std::log(p1) + 3.0 * std::log(1e-9)) / 4.0);  // higher n-grams floored
  CHECK(textsim::bleu(cand, ref) == Catch::Approx(expected).epsilon(1e-12));
}
