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

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace xmcaug::textsim {

using TokenSequence = std::vector<std::string>;

// Literal separator joining the title and description fields of one input
// text. It is kept verbatim by the tokenizer (never lowercased or split).
inline constexpr std::string_view kFieldSeparator = "/SEP/";

namespace detail {

inline bool is_word_byte(unsigned char c) {
  // Bytes >= 0x80 are UTF-8 continuation/lead bytes; treat them as word
  // characters so multi-byte sequences stay intact.
  return std::isalnum(c) != 0 || c >= 0x80;
}

}  // namespace detail

// Lowercases (ASCII only), splits punctuation off as single-character
// tokens, and splits on whitespace. A whitespace-delimited "/SEP/" chunk is
// emitted unchanged as one token. Idempotent on its own space-joined output.
inline TokenSequence tokenize(std::string_view text) {
  TokenSequence tokens;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    const std::string_view chunk = text.substr(i, j - i);
    i = j;
    if (chunk == kFieldSeparator) {
      tokens.emplace_back(chunk);
      continue;
    }
    std::string word;
    for (char raw : chunk) {
      const unsigned char c = static_cast<unsigned char>(raw);
      if (detail::is_word_byte(c)) {
        word.push_back(static_cast<char>(std::tolower(c)));
      } else {
        if (!word.empty()) {
          tokens.push_back(std::move(word));
          word.clear();
        }
        tokens.emplace_back(1, raw);
      }
    }
    if (!word.empty()) tokens.push_back(std::move(word));
  }
  return tokens;
}

inline std::string join_tokens(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

namespace detail {

struct MatchBlock {
  std::size_t a_pos = 0;
  std::size_t b_pos = 0;
  std::size_t size = 0;
};

// Positions of each byte value in b, ascending. Shared across the recursive
// longest-match calls.
struct ByteIndex {
  std::array<std::vector<std::size_t>, 256> pos;
  explicit ByteIndex(std::string_view b) {
    for (std::size_t j = 0; j < b.size(); ++j)
      pos[static_cast<unsigned char>(b[j])].push_back(j);
  }
};

// Longest block common to a[alo,ahi) and b[blo,bhi). Ties resolve to the
// earliest start in a, then the earliest start in b.
inline MatchBlock longest_match(std::string_view a, const ByteIndex& bi, std::size_t alo,
                                std::size_t ahi, std::size_t blo, std::size_t bhi) {
  MatchBlock best{alo, blo, 0};
  // j2len[j] = length of the common run ending at (i-1, j-1).
  std::unordered_map<std::size_t, std::size_t> j2len, next;
  for (std::size_t i = alo; i < ahi; ++i) {
    next.clear();
    const auto& positions = bi.pos[static_cast<unsigned char>(a[i])];
    auto it = std::lower_bound(positions.begin(), positions.end(), blo);
    for (; it != positions.end() && *it < bhi; ++it) {
      const std::size_t j = *it;
      std::size_t k = 1;
      if (j > blo) {
        auto prev = j2len.find(j - 1);
        if (prev != j2len.end()) k = prev->second + 1;
      }
      next[j] = k;
      if (k > best.size) best = MatchBlock{i - k + 1, j - k + 1, k};
    }
    std::swap(j2len, next);
  }
  return best;
}

inline std::size_t total_match_size(std::string_view a, std::string_view b) {
  ByteIndex bi(b);
  std::size_t total = 0;
  // Explicit work list instead of recursion; order of processing does not
  // affect the total.
  std::vector<std::array<std::size_t, 4>> queue{{0, a.size(), 0, b.size()}};
  while (!queue.empty()) {
    const auto [alo, ahi, blo, bhi] = queue.back();
    queue.pop_back();
    const MatchBlock m = longest_match(a, bi, alo, ahi, blo, bhi);
    if (m.size == 0) continue;
    total += m.size;
    queue.push_back({alo, m.a_pos, blo, m.b_pos});
    queue.push_back({m.a_pos + m.size, ahi, m.b_pos + m.size, bhi});
  }
  return total;
}

}  // namespace detail

// Gestalt pattern-matching ratio 2M/T, where M is the total length of the
// recursively found longest matching blocks and T = |a| + |b|. Character
// (byte) level, no junk heuristics, fully deterministic. Two empty strings
// compare equal (1.0).
inline double similarity_ratio(std::string_view a, std::string_view b) {
  const std::size_t t = a.size() + b.size();
  if (t == 0) return 1.0;
  return 2.0 * static_cast<double>(detail::total_match_size(a, b)) / static_cast<double>(t);
}

// Cheap upper bound on similarity_ratio based on byte multiset overlap.
// Useful to skip the full block search when only a threshold test is needed.
inline double similarity_upper_bound(std::string_view a, std::string_view b) {
  const std::size_t t = a.size() + b.size();
  if (t == 0) return 1.0;
  std::array<std::int64_t, 256> counts{};
  for (unsigned char c : a) ++counts[c];
  std::size_t common = 0;
  for (unsigned char c : b) {
    if (counts[c] > 0) {
      --counts[c];
      ++common;
    }
  }
  return 2.0 * static_cast<double>(common) / static_cast<double>(t);
}

namespace detail {

inline std::unordered_map<std::string, int> ngram_counts(const TokenSequence& tokens,
                                                         std::size_t n) {
  std::unordered_map<std::string, int> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key.push_back('\x1f');
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace detail

// Sentence BLEU against a single reference: geometric mean of modified
// n-gram precisions with uniform weights, times the brevity penalty
// exp(min(0, 1 - r/c)). Precisions with a zero numerator are floored at
// kBleuFloor; the paper pipeline never needs multi-reference BLEU.
inline constexpr double kBleuFloor = 1e-9;

inline double bleu(const TokenSequence& candidate, const TokenSequence& reference,
                   std::size_t max_n = 4) {
  if (max_n < 1) throw std::invalid_argument("bleu: max_n must be >= 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto cand = detail::ngram_counts(candidate, n);
    const auto ref = detail::ngram_counts(reference, n);
    std::int64_t matched = 0;
    std::int64_t total = 0;
    for (const auto& [key, count] : cand) {
      total += count;
      auto it = ref.find(key);
      if (it != ref.end()) matched += std::min(count, it->second);
    }
    const double p = (matched > 0 && total > 0)
                         ? static_cast<double>(matched) / static_cast<double>(total)
                         : kBleuFloor;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double brevity = std::exp(std::min(0.0, 1.0 - r / c));
  return brevity * std::exp(log_sum / static_cast<double>(max_n));
}

}  // namespace xmcaug::textsim
