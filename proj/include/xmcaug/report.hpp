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
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace xmcaug::report {

// One result row: an augmentation method evaluated at one training
// fraction. Metric values are fractions in [0, 1]; they are rendered as
// percentages.
struct ReportRow {
  std::string method;  // "-" for the unaugmented baseline
  double train_fraction = 1.0;
  long n_train = 0;
  std::string weight = "NA";  // lambda of synthetic examples, or NA
  std::map<std::string, double> values;  // column -> value
};

inline const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {"P@1",   "P@3",   "P@5",   "nDCG@3",
                                                "nDCG@5", "PSP@1", "PSP@3", "PSP@5",
                                                "PSnDCG@3", "PSnDCG@5"};
  return cols;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string format_percent_label(double fraction) {
  const double pct = fraction * 100.0;
  if (std::abs(pct - std::round(pct)) < 1e-9)
    return std::to_string(static_cast<long>(std::llround(pct))) + "%";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g%%", pct);
  return buf;
}

namespace detail {

inline int method_rank(const std::string& m) {
  if (m == "-") return 0;
  if (m == "gda") return 1;
  if (m == "eda") return 2;
  if (m == "wordnet") return 3;
  if (m == "imported") return 4;
  return 5;
}

inline void sort_rows(std::vector<ReportRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.train_fraction != b.train_fraction) return a.train_fraction > b.train_fraction;
    return method_rank(a.method) < method_rank(b.method);
  });
}

inline void check_consistent(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("report: no rows");
  for (const auto& row : rows)
    for (const auto& col : metric_columns())
      if (!row.values.count(col))
        throw std::invalid_argument("report: row '" + row.method + "' lacks column " + col);
}

}  // namespace detail

// Machine-readable CSV, rows sorted by %Train descending with the
// baseline first inside each group. Metric cells are percentages with six
// decimals so reruns compare byte-for-byte.
inline std::string render_csv(std::vector<ReportRow> rows) {
  detail::check_consistent(rows);
  detail::sort_rows(rows);
  std::string out = "DA,%Train,N_train,weight";
  for (const auto& col : metric_columns()) out += "," + col;
  out += "\n";
  for (const auto& row : rows) {
    out += row.method;
    out += "," + format_percent_label(row.train_fraction);
    out += "," + std::to_string(row.n_train);
    out += "," + row.weight;
    for (const auto& col : metric_columns())
      out += "," + format_fixed(row.values.at(col) * 100.0, 6);
    out += "\n";
  }
  return out;
}

// Aligned text table; the best value of each metric column within each
// %Train group is marked with '*'.
inline std::string render_table(std::vector<ReportRow> rows) {
  detail::check_consistent(rows);
  detail::sort_rows(rows);

  std::vector<std::string> header = {"DA", "%Train", "N_train", "weight"};
  for (const auto& col : metric_columns()) header.push_back(col);

  // Best cell per (group, column).
  std::map<std::pair<double, std::string>, double> best;
  for (const auto& row : rows)
    for (const auto& col : metric_columns()) {
      auto key = std::make_pair(row.train_fraction, col);
      auto it = best.find(key);
      if (it == best.end() || row.values.at(col) > it->second) best[key] = row.values.at(col);
    }

  std::vector<std::vector<std::string>> cells;
  for (const auto& row : rows) {
    std::vector<std::string> line = {row.method,
                                     format_percent_label(row.train_fraction),
                                     std::to_string(row.n_train), row.weight};
    for (const auto& col : metric_columns()) {
      const double v = row.values.at(col);
      std::string cell = format_fixed(v * 100.0, 2);
      if (v == best.at({row.train_fraction, col})) cell += "*";
      line.push_back(std::move(cell));
    }
    cells.push_back(std::move(line));
  }

  std::vector<std::size_t> widths(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) widths[c] = header[c].size();
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());

  auto emit_line = [&](const std::vector<std::string>& line, std::string& out) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c) out += "  ";
      out += line[c];
      out.append(widths[c] - line[c].size(), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
  };

  std::string out;
  emit_line(header, out);
  {
    std::string rule;
    for (std::size_t c = 0; c < widths.size(); ++c) {
      if (c) rule += "  ";
      rule.append(widths[c], '-');
    }
    out += rule + "\n";
  }
  double group = -1.0;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    const double f = rows[r].train_fraction;
    if (group >= 0.0 && f != group) out += "\n";
    group = f;
    emit_line(cells[r], out);
  }
  return out;
}

}  // namespace xmcaug::report
