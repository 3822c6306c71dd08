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

// Independent reference implementations used only by tests. These are
// deliberately naive (cubic string search, direct formula loops) and share
// no code with the library paths they check.

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "xmcaug/common.hpp"

namespace testsupport {

inline std::string random_string(xmcaug::Rng& rng, std::size_t max_len,
                                 std::string_view alphabet) {
  const auto len = rng.bounded(max_len + 1);
  std::string s;
  for (std::uint64_t i = 0; i < len; ++i)
    s.push_back(alphabet[static_cast<std::size_t>(rng.bounded(alphabet.size()))]);
  return s;
}

namespace detail {

// O(n^3) longest common block of a[alo,ahi) x b[blo,bhi); ties prefer the
// earliest start in a, then in b.
inline void brute_blocks(std::string_view a, std::string_view b, std::size_t alo, std::size_t ahi,
                         std::size_t blo, std::size_t bhi, std::size_t& total) {
  std::size_t bi = alo, bj = blo, bs = 0;
  for (std::size_t i = alo; i < ahi; ++i)
    for (std::size_t j = blo; j < bhi; ++j) {
      std::size_t k = 0;
      while (i + k < ahi && j + k < bhi && a[i + k] == b[j + k]) ++k;
      if (k > bs) {
        bi = i;
        bj = j;
        bs = k;
      }
    }
  if (bs == 0) return;
  total += bs;
  brute_blocks(a, b, alo, bi, blo, bj, total);
  brute_blocks(a, b, bi + bs, ahi, bj + bs, bhi, total);
}

}  // namespace detail

inline double brute_force_gestalt_ratio(std::string_view a, std::string_view b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t total = 0;
  detail::brute_blocks(a, b, 0, a.size(), 0, b.size(), total);
  return 2.0 * static_cast<double>(total) / static_cast<double>(a.size() + b.size());
}

// Direct-formula ranked-metric references over an explicit hit vector.
struct NaiveMetrics {
  static std::vector<int> hits(const std::vector<int>& ranked, const std::set<int>& gold, int k) {
    std::vector<int> h;
    for (int i = 0; i < k; ++i) h.push_back(gold.count(ranked[static_cast<std::size_t>(i)]) ? 1 : 0);
    return h;
  }

  static double precision(const std::vector<int>& ranked, const std::set<int>& gold, int k) {
    double s = 0;
    for (int h : hits(ranked, gold, k)) s += h;
    return s / k;
  }

  static double dcg(const std::vector<int>& ranked, const std::set<int>& gold, int k,
                    double base) {
    double s = 0;
    const auto h = hits(ranked, gold, k);
    for (int i = 1; i <= k; ++i)
      s += h[static_cast<std::size_t>(i - 1)] / (std::log(i + 1.0) / std::log(base));
    return s;
  }

  static double idcg(std::size_t gold_size, int k, double base) {
    double s = 0;
    const int m = std::min<int>(k, static_cast<int>(gold_size));
    for (int i = 1; i <= m; ++i) s += 1.0 / (std::log(i + 1.0) / std::log(base));
    return s;
  }

  static double ndcg(const std::vector<int>& ranked, const std::set<int>& gold, int k,
                     double base = 2.0) {
    return dcg(ranked, gold, k, base) / idcg(gold.size(), k, base);
  }

  static double psp(const std::vector<int>& ranked, const std::set<int>& gold, int k,
                    const std::vector<double>& p) {
    double s = 0;
    for (int i = 0; i < k; ++i) {
      const int label = ranked[static_cast<std::size_t>(i)];
      if (gold.count(label)) s += 1.0 / p[static_cast<std::size_t>(label)];
    }
    return s / k;
  }

  static double psndcg(const std::vector<int>& ranked, const std::set<int>& gold, int k,
                       const std::vector<double>& p, double base = 2.0) {
    double s = 0;
    for (int i = 1; i <= k; ++i) {
      const int label = ranked[static_cast<std::size_t>(i - 1)];
      if (gold.count(label))
        s += 1.0 / (p[static_cast<std::size_t>(label)] * (std::log(i + 1.0) / std::log(base)));
    }
    return s / idcg(gold.size(), k, base);
  }
};

}  // namespace testsupport
