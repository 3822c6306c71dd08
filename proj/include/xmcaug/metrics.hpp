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
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "xmcaug/corpus.hpp"

// Ranked-retrieval metrics over all labels (P@k, nDCG@k) and tail labels
// (PSP@k, PSnDCG@k). PSP is intentionally left unclipped: a single hit on
// a rare label can exceed 1 per example; corpus means are reported raw.
namespace xmcaug::metrics {

struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A ranked label list plus the gold label set for one example.
struct RankedPrediction {
  std::vector<int> ranked;  // distinct label indices, best first
  std::vector<int> gold;    // sorted label indices

  bool hit(int rank_pos) const {
    return std::binary_search(gold.begin(), gold.end(),
                              ranked.at(static_cast<std::size_t>(rank_pos)));
  }
};

inline void require_depth(const RankedPrediction& rp, int k) {
  if (k < 1) throw MetricError("k must be >= 1");
  if (static_cast<int>(rp.ranked.size()) < k)
    throw MetricError("ranked list shorter than k");
}

// (1/k) * number of top-k labels present in the gold set.
inline double precision_at_k(const RankedPrediction& rp, int k) {
  require_depth(rp, k);
  int hits = 0;
  for (int i = 0; i < k; ++i)
    if (rp.hit(i)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(k);
}

// DCG@k / iDCG@k with positions discounted by log(i+1). The ratio is
// invariant to the log base; base 2 is the default convention.
inline double ndcg_at_k(const RankedPrediction& rp, int k, double log_base = 2.0) {
  require_depth(rp, k);
  if (rp.gold.empty()) throw MetricError("ndcg_at_k: empty gold label set");
  if (!(log_base > 1.0)) throw MetricError("ndcg_at_k: log base must be > 1");
  const double lb = std::log(log_base);
  double dcg = 0.0;
  for (int i = 0; i < k; ++i)
    if (rp.hit(i)) dcg += 1.0 / (std::log(static_cast<double>(i) + 2.0) / lb);
  const int ideal = std::min<int>(k, static_cast<int>(rp.gold.size()));
  double idcg = 0.0;
  for (int i = 0; i < ideal; ++i) idcg += 1.0 / (std::log(static_cast<double>(i) + 2.0) / lb);
  return dcg / idcg;
}

// (1/k) * sum over top-k hits of 1/p_label. Unclipped.
inline double psp_at_k(const RankedPrediction& rp, int k, const corpus::PropensityModel& pm) {
  require_depth(rp, k);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!rp.hit(i)) continue;
    const int label = rp.ranked[static_cast<std::size_t>(i)];
    if (label < 0 || static_cast<std::size_t>(label) >= pm.p.size())
      throw MetricError("psp_at_k: missing propensity for label " + std::to_string(label));
    sum += 1.0 / pm.p[static_cast<std::size_t>(label)];
  }
  return sum / static_cast<double>(k);
}

// PDCG@k / iDCG@k where hits are up-weighted by 1/p before discounting.
inline double psndcg_at_k(const RankedPrediction& rp, int k, const corpus::PropensityModel& pm,
                          double log_base = 2.0) {
  require_depth(rp, k);
  if (rp.gold.empty()) throw MetricError("psndcg_at_k: empty gold label set");
  if (!(log_base > 1.0)) throw MetricError("psndcg_at_k: log base must be > 1");
  const double lb = std::log(log_base);
  double pdcg = 0.0;
  for (int i = 0; i < k; ++i) {
    if (!rp.hit(i)) continue;
    const int label = rp.ranked[static_cast<std::size_t>(i)];
    if (label < 0 || static_cast<std::size_t>(label) >= pm.p.size())
      throw MetricError("psndcg_at_k: missing propensity for label " + std::to_string(label));
    pdcg += 1.0 / (pm.p[static_cast<std::size_t>(label)] *
                   (std::log(static_cast<double>(i) + 2.0) / lb));
  }
  const int ideal = std::min<int>(k, static_cast<int>(rp.gold.size()));
  double idcg = 0.0;
  for (int i = 0; i < ideal; ++i) idcg += 1.0 / (std::log(static_cast<double>(i) + 2.0) / lb);
  return pdcg / idcg;
}

inline const std::vector<std::string>& metric_families() {
  static const std::vector<std::string> families = {"P", "nDCG", "PSP", "PSnDCG"};
  return families;
}

// Corpus means of the four metric families at each k. Examples with an
// empty gold set are excluded from the means and counted.
struct MetricReport {
  std::vector<int> ks;
  std::map<std::string, std::map<int, double>> means;
  std::map<std::string, std::map<int, std::vector<double>>> per_example;
  long evaluated = 0;
  long skipped_empty_gold = 0;

  double mean(const std::string& family, int k) const { return means.at(family).at(k); }
};

inline MetricReport evaluate(const std::vector<RankedPrediction>& predictions,
                             const corpus::PropensityModel& pm,
                             const std::vector<int>& ks = {1, 3, 5}) {
  if (predictions.empty()) throw MetricError("evaluate: empty prediction list");
  if (ks.empty()) throw MetricError("evaluate: no k values");

  MetricReport report;
  report.ks = ks;
  for (const auto& fam : metric_families())
    for (int k : ks) {
      report.means[fam][k] = 0.0;
      report.per_example[fam][k] = {};
    }

  for (const auto& rp : predictions) {
    if (rp.gold.empty()) {
      ++report.skipped_empty_gold;
      continue;
    }
    ++report.evaluated;
    for (int k : ks) {
      report.per_example["P"][k].push_back(precision_at_k(rp, k));
      report.per_example["nDCG"][k].push_back(ndcg_at_k(rp, k));
      report.per_example["PSP"][k].push_back(psp_at_k(rp, k, pm));
      report.per_example["PSnDCG"][k].push_back(psndcg_at_k(rp, k, pm));
    }
  }
  if (report.evaluated == 0) throw MetricError("evaluate: all examples had empty gold sets");

  // Deterministic reduction: sum in example order, divide once.
  for (const auto& fam : metric_families())
    for (int k : ks) {
      double sum = 0.0;
      for (double v : report.per_example[fam][k]) sum += v;
      report.means[fam][k] = sum / static_cast<double>(report.evaluated);
    }
  return report;
}

}  // namespace xmcaug::metrics
