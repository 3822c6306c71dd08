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
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xmcaug/common.hpp"
#include "xmcaug/textsim.hpp"

namespace xmcaug::corpus {

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One text record: product title + description and its label set, stored as
// a sorted set of indices into the dataset's label vocabulary.
struct Example {
  std::string id;
  std::string title;
  std::string description;
  std::vector<int> labels;  // sorted, unique

  bool has_label(int l) const { return std::binary_search(labels.begin(), labels.end(), l); }
};

// Ordered label names plus per-label training counts. Indices are assigned
// in first-observation order and stay stable across splitting, subsampling
// and filtering; only the counts are refreshed.
class LabelVocabulary {
 public:
  int add_or_get(const std::string& name) {
    auto it = index_.find(name);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(names_.size());
    names_.push_back(name);
    frequencies_.push_back(0);
    index_.emplace(name, id);
    return id;
  }

  // -1 when absent.
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  int size() const { return static_cast<int>(names_.size()); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }

  std::int64_t frequency(int id) const { return frequencies_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::int64_t>& frequencies() const { return frequencies_; }
  void set_frequencies(std::vector<std::int64_t> f) {
    if (f.size() != names_.size()) throw CorpusError("frequency vector size mismatch");
    frequencies_ = std::move(f);
  }

 private:
  std::vector<std::string> names_;
  std::vector<std::int64_t> frequencies_;
  std::unordered_map<std::string, int> index_;
};

struct Dataset {
  std::vector<Example> examples;
  LabelVocabulary vocabulary;

  std::size_t size() const { return examples.size(); }
  int num_labels() const { return vocabulary.size(); }
};

// Inverse-propensity model p_l = 1 / (1 + C (N_l + B)^-A) with
// C = (ln N - 1)(B + 1)^A clamped to >= 0. Values always lie in (0, 1].
struct PropensityModel {
  double a = 0.55;
  double b = 1.5;
  double c = 0.0;
  std::vector<double> p;

  double propensity(int label) const { return p.at(static_cast<std::size_t>(label)); }
};

struct PairConfig {
  int min_words = 5;
  int max_words = 200;
  double sim_threshold = 0.95;
  int max_pairs_per_group = 20;  // 0 = uncapped
  std::uint64_t seed = 0;
};

// Ordered same-label-set example pairs used to train the conditional
// generator, plus the configuration that produced them.
struct PairSet {
  std::vector<std::pair<std::string, std::string>> pairs;  // (source id, target id)
  PairConfig provenance;

  std::size_t size() const { return pairs.size(); }
};

enum class DatasetFormat { jsonl };

inline DatasetFormat parse_format(std::string_view tag) {
  if (tag == "jsonl") return DatasetFormat::jsonl;
  throw CorpusError("unknown dataset format tag: " + std::string(tag));
}

namespace detail {

inline std::vector<std::int64_t> count_labels(const std::vector<Example>& examples, int k) {
  std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
  for (const auto& e : examples)
    for (int l : e.labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

inline void refresh_frequencies(Dataset& d) {
  d.vocabulary.set_frequencies(count_labels(d.examples, d.vocabulary.size()));
}

}  // namespace detail

// Reads one record per line with fields id, title, description and labels
// (a list of names). The vocabulary is built from all observed labels in
// first-occurrence order; record order is preserved. In strict mode an
// empty label list is an error.
inline Dataset load_dataset(const std::string& path, DatasetFormat format, bool strict = false) {
  if (format != DatasetFormat::jsonl) throw CorpusError("unsupported dataset format");
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open dataset: " + path);

  Dataset d;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record");
    Example e;
    try {
      e.id = rec.at("id").get<std::string>();
      e.title = rec.at("title").get<std::string>();
      e.description = rec.at("description").get<std::string>();
      for (const auto& name : rec.at("labels"))
        e.labels.push_back(d.vocabulary.add_or_get(name.get<std::string>()));
    } catch (const nlohmann::json::exception& ex) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record (" +
                        ex.what() + ")");
    }
    std::sort(e.labels.begin(), e.labels.end());
    e.labels.erase(std::unique(e.labels.begin(), e.labels.end()), e.labels.end());
    if (strict && e.labels.empty())
      throw CorpusError(path + ":" + std::to_string(lineno) + ": empty label set (strict mode)");
    if (!seen_ids.insert(e.id).second)
      throw CorpusError(path + ":" + std::to_string(lineno) + ": duplicate id '" + e.id + "'");
    d.examples.push_back(std::move(e));
  }
  detail::refresh_frequencies(d);
  return d;
}

// Same format, but label names resolve against a fixed vocabulary so label
// indices line up across artifacts (train/validation/test snapshots).
// Unknown names are an error.
inline Dataset load_dataset_with_vocab(const std::string& path, DatasetFormat format,
                                       const LabelVocabulary& vocab, bool strict = false) {
  if (format != DatasetFormat::jsonl) throw CorpusError("unsupported dataset format");
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open dataset: " + path);

  Dataset d;
  d.vocabulary = vocab;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record");
    Example e;
    try {
      e.id = rec.at("id").get<std::string>();
      e.title = rec.at("title").get<std::string>();
      e.description = rec.at("description").get<std::string>();
      for (const auto& name : rec.at("labels")) {
        const int id = d.vocabulary.find(name.get<std::string>());
        if (id < 0)
          throw CorpusError(path + ":" + std::to_string(lineno) + ": label '" +
                            name.get<std::string>() + "' not in vocabulary");
        e.labels.push_back(id);
      }
    } catch (const nlohmann::json::exception& ex) {
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed record (" +
                        ex.what() + ")");
    }
    std::sort(e.labels.begin(), e.labels.end());
    e.labels.erase(std::unique(e.labels.begin(), e.labels.end()), e.labels.end());
    if (strict && e.labels.empty())
      throw CorpusError(path + ":" + std::to_string(lineno) + ": empty label set (strict mode)");
    if (!seen_ids.insert(e.id).second)
      throw CorpusError(path + ":" + std::to_string(lineno) + ": duplicate id '" + e.id + "'");
    d.examples.push_back(std::move(e));
  }
  detail::refresh_frequencies(d);
  return d;
}

inline void save_dataset(const Dataset& d, const std::string& path) {
  std::ostringstream out;
  for (const auto& e : d.examples) {
    nlohmann::ordered_json rec;
    rec["id"] = e.id;
    rec["title"] = e.title;
    rec["description"] = e.description;
    auto labels = nlohmann::ordered_json::array();
    for (int l : e.labels) labels.push_back(d.vocabulary.name(l));
    rec["labels"] = std::move(labels);
    out << rec.dump() << '\n';
  }
  write_file(path, out.str());
}

// Full input text of an example: title ++ " /SEP/ " ++ description,
// tokenized and truncated to max_words tokens. "/SEP/" counts as one token.
inline textsim::TokenSequence build_input_text(const Example& e, std::size_t max_words = 500) {
  std::string text = e.title;
  text += ' ';
  text += textsim::kFieldSeparator;
  text += ' ';
  text += e.description;
  textsim::TokenSequence tokens = textsim::tokenize(text);
  if (tokens.size() > max_words) tokens.resize(max_words);
  return tokens;
}

// Rebuilds (title, description) from an edited or generated token stream:
// tokens before the first field separator become the title, the rest the
// description. Without a separator everything lands in the description.
inline void split_input_fields(const textsim::TokenSequence& tokens, std::string* title,
                               std::string* description) {
  auto sep = std::find(tokens.begin(), tokens.end(), std::string(textsim::kFieldSeparator));
  if (sep == tokens.end()) {
    *title = "";
    *description = textsim::join_tokens(tokens);
    return;
  }
  *title = textsim::join_tokens(textsim::TokenSequence(tokens.begin(), sep));
  *description = textsim::join_tokens(textsim::TokenSequence(sep + 1, tokens.end()));
}

namespace detail {

// Partition by uniformly sampled index set; original record order is kept
// on both sides and frequencies are refreshed per side.
inline std::pair<Dataset, Dataset> partition(const Dataset& d, std::size_t take,
                                             std::uint64_t seed) {
  Rng rng(seed);
  auto chosen = rng.sample_indices(d.size(), take);
  std::vector<char> mark(d.size(), 0);
  for (auto i : chosen) mark[i] = 1;

  Dataset rest, taken;
  rest.vocabulary = d.vocabulary;
  taken.vocabulary = d.vocabulary;
  for (std::size_t i = 0; i < d.size(); ++i)
    (mark[i] ? taken : rest).examples.push_back(d.examples[i]);
  refresh_frequencies(rest);
  refresh_frequencies(taken);
  return {std::move(rest), std::move(taken)};
}

}  // namespace detail

// Disjoint (train, validation) split with validation size round(fraction*N),
// deterministic per seed.
inline std::pair<Dataset, Dataset> split_train_validation(const Dataset& d, double fraction = 0.1,
                                                          std::uint64_t seed = 0) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw CorpusError("split fraction must be in (0, 1)");
  const auto take = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(d.size())));
  return detail::partition(d, take, seed);
}

// Uniform subsample without replacement of size floor(fraction*N). Label
// vocabulary entries (and indices) are unchanged; counts are refreshed.
inline Dataset subsample(const Dataset& d, double fraction, std::uint64_t seed = 0) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw CorpusError("subsample fraction must be in (0, 1]");
  if (fraction == 1.0) return d;
  const auto take = static_cast<std::size_t>(
      std::floor(fraction * static_cast<double>(d.size())));
  auto [rest, taken] = detail::partition(d, take, seed);
  (void)rest;
  return std::move(taken);
}

inline std::vector<std::int64_t> label_frequencies(const Dataset& d) {
  return detail::count_labels(d.examples, d.vocabulary.size());
}

// Fits the standard inverse-propensity model from per-label counts.
// C is clamped to >= 0 so tiny datasets (ln N <= 1) degrade to p = 1.
inline PropensityModel compute_propensities(const std::vector<std::int64_t>& counts,
                                            std::int64_t n, double a = 0.55, double b = 1.5) {
  if (n < 1) throw CorpusError("compute_propensities: N must be >= 1");
  if (!(a > 0.0)) throw CorpusError("compute_propensities: A must be > 0");
  if (b < 0.0) throw CorpusError("compute_propensities: B must be >= 0");
  PropensityModel pm;
  pm.a = a;
  pm.b = b;
  pm.c = std::max(0.0, (std::log(static_cast<double>(n)) - 1.0) * std::pow(b + 1.0, a));
  pm.p.reserve(counts.size());
  for (const std::int64_t nl : counts) {
    const double w = pm.c * std::pow(static_cast<double>(nl) + b, -a);
    double p = 1.0 / (1.0 + w);
    p = std::min(1.0, std::max(p, std::numeric_limits<double>::min()));
    pm.p.push_back(p);
  }
  return pm;
}

inline PropensityModel compute_propensities(const Dataset& d, double a = 0.55, double b = 1.5) {
  return compute_propensities(label_frequencies(d),
                              static_cast<std::int64_t>(std::max<std::size_t>(d.size(), 1)), a, b);
}

// The media labels dominating the source corpus; examples carrying any of
// them are excluded from pairing and from generation sources.
inline std::vector<std::string> default_media_labels() {
  return {"books", "music", "movies", "tv", "games"};
}

// One label name per line; '#' lines and blank lines are skipped.
inline std::vector<std::string> load_label_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open label list: " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    names.push_back(line);
  }
  return names;
}

// Drops every example whose label set intersects the media set. Names that
// do not resolve in the vocabulary produce a warning, not an error.
inline Dataset filter_media_labels(const Dataset& d, const std::vector<std::string>& media,
                                   std::vector<std::string>* warnings = nullptr) {
  std::unordered_set<int> media_ids;
  for (const auto& name : media) {
    const int id = d.vocabulary.find(name);
    if (id < 0) {
      if (warnings)
        warnings->push_back("media label '" + name + "' not present in vocabulary");
      continue;
    }
    media_ids.insert(id);
  }
  Dataset out;
  out.vocabulary = d.vocabulary;
  for (const auto& e : d.examples) {
    const bool hit = std::any_of(e.labels.begin(), e.labels.end(),
                                 [&](int l) { return media_ids.count(l) > 0; });
    if (!hit) out.examples.push_back(e);
  }
  detail::refresh_frequencies(out);
  return out;
}

// Groups examples by exact label-set equality and emits ordered pairs
// (source, target), source != target, where both texts fall inside
// [min_words, max_words] and the character-level similarity of the two
// texts does not exceed sim_threshold. Per group at most
// max_pairs_per_group pairs survive, drawn uniformly without replacement
// (deterministically per seed).
inline PairSet make_pairs(const Dataset& d, const PairConfig& cfg) {
  if (cfg.min_words > cfg.max_words) throw CorpusError("make_pairs: min_words > max_words");
  if (!(cfg.sim_threshold >= 0.0 && cfg.sim_threshold <= 1.0))
    throw CorpusError("make_pairs: sim_threshold must be in [0, 1]");

  PairSet ps;
  ps.provenance = cfg;

  // Canonical text + word count per example, computed once.
  std::vector<std::string> text(d.size());
  std::vector<bool> in_bounds(d.size(), false);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto tokens = build_input_text(d.examples[i], std::numeric_limits<std::size_t>::max());
    const auto words = static_cast<std::int64_t>(tokens.size());
    in_bounds[i] = words >= cfg.min_words && words <= cfg.max_words;
    if (in_bounds[i]) text[i] = textsim::join_tokens(tokens);
  }

  // Groups in first-occurrence order for deterministic output.
  std::map<std::vector<int>, std::size_t> group_of;
  std::vector<std::vector<std::size_t>> groups;
  std::vector<std::size_t> group_order;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!in_bounds[i]) continue;
    auto [it, inserted] = group_of.try_emplace(d.examples[i].labels, groups.size());
    if (inserted) {
      groups.emplace_back();
      group_order.push_back(it->second);
    }
    groups[it->second].push_back(i);
  }

  Rng rng(cfg.seed);
  for (const std::size_t g : group_order) {
    const auto& members = groups[g];
    const std::size_t m = members.size();
    if (m < 2) continue;

    // All ordered (i, j) index pairs of the group, shuffled. Scanning the
    // shuffled list and keeping the first valid pairs draws uniformly
    // without replacement from the valid set.
    std::vector<std::uint64_t> candidates;
    candidates.reserve(m * (m - 1));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) candidates.push_back(static_cast<std::uint64_t>(i) * m + j);
    rng.shuffle(candidates);

    const std::size_t cap = cfg.max_pairs_per_group > 0
                                ? static_cast<std::size_t>(cfg.max_pairs_per_group)
                                : candidates.size();
    std::size_t kept = 0;
    for (const std::uint64_t c : candidates) {
      if (kept >= cap) break;
      const std::size_t src = members[static_cast<std::size_t>(c / m)];
      const std::size_t tgt = members[static_cast<std::size_t>(c % m)];
      if (textsim::similarity_upper_bound(text[src], text[tgt]) > cfg.sim_threshold &&
          textsim::similarity_ratio(text[src], text[tgt]) > cfg.sim_threshold)
        continue;
      ps.pairs.emplace_back(d.examples[src].id, d.examples[tgt].id);
      ++kept;
    }
  }
  return ps;
}

inline void save_pairs(const PairSet& ps, const std::string& path) {
  std::ostringstream out;
  for (const auto& [src, tgt] : ps.pairs) out << src << '\t' << tgt << '\n';
  write_file(path, out.str());
}

inline PairSet load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open pair file: " + path);
  PairSet ps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size())
      throw CorpusError(path + ":" + std::to_string(lineno) + ": malformed pair record");
    ps.pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return ps;
}

}  // namespace xmcaug::corpus
