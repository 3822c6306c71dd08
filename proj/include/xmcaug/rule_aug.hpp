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
#include <cstddef>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "xmcaug/common.hpp"
#include "xmcaug/corpus.hpp"
#include "xmcaug/textsim.hpp"

// Rule-based label-invariant augmenters: the four random edit operations
// plus the synonym-only variant. Every augmented example keeps its parent's
// label set verbatim.
namespace xmcaug::rule_aug {

using textsim::TokenSequence;

struct SynonymLexicon {
  std::unordered_map<std::string, std::vector<std::string>> synonyms;
  std::unordered_set<std::string> stopwords;

  bool is_stopword(const std::string& token) const { return stopwords.count(token) > 0; }

  // Replacement/insertion sources: non-stopword tokens with an entry.
  // The field separator is never an edit source.
  bool eligible(const std::string& token) const {
    return token != textsim::kFieldSeparator && !is_stopword(token) &&
           synonyms.count(token) > 0;
  }
};

// Lexicon file: "word<TAB>syn1,syn2,...". Self-synonyms are dropped on
// load; an entry whose synonym list becomes empty is discarded.
inline SynonymLexicon load_lexicon(const std::string& synonyms_path,
                                   const std::string& stopwords_path) {
  SynonymLexicon lex;
  {
    std::ifstream in(synonyms_path);
    if (!in) throw corpus::CorpusError("cannot open synonym lexicon: " + synonyms_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw corpus::CorpusError(synonyms_path + ":" + std::to_string(lineno) +
                                  ": expected word<TAB>synonyms");
      const std::string word = line.substr(0, tab);
      std::vector<std::string> syns;
      std::string item;
      for (std::size_t i = tab + 1; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == ',') {
          if (!item.empty() && item != word) syns.push_back(item);
          item.clear();
        } else {
          item.push_back(line[i]);
        }
      }
      if (!syns.empty()) lex.synonyms[word] = std::move(syns);
    }
  }
  {
    std::ifstream in(stopwords_path);
    if (!in) throw corpus::CorpusError("cannot open stopword list: " + stopwords_path);
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (!line.empty() && line[0] != '#') lex.stopwords.insert(line);
    }
  }
  return lex;
}

struct EdaConfig {
  double alpha_sr = 0.1;  // fraction of words replaced by synonyms
  double alpha_ri = 0.1;  // fraction of words inserted
  double alpha_rs = 0.1;  // fraction of word pairs swapped
  double p_rd = 0.1;      // per-token deletion probability
  int n_aug = 1;          // augmented copies per example

  void validate() const {
    auto ratio = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!ratio(alpha_sr) || !ratio(alpha_ri) || !ratio(alpha_rs) || !ratio(p_rd))
      throw std::invalid_argument("EdaConfig: ratios must be in [0, 1]");
    if (n_aug < 1) throw std::invalid_argument("EdaConfig: n_aug must be >= 1");
  }
};

// Replaces n randomly chosen eligible tokens with a uniformly chosen
// synonym each; with fewer than n eligible tokens, all of them are
// replaced. Length is preserved.
inline TokenSequence synonym_replacement(const TokenSequence& tokens, int n,
                                         const SynonymLexicon& lex, Rng& rng) {
  if (n < 0) throw std::invalid_argument("synonym_replacement: n must be >= 0");
  TokenSequence out = tokens;
  if (n == 0) return out;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (lex.eligible(out[i])) eligible.push_back(i);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), eligible.size());
  rng.shuffle(eligible);
  for (std::size_t k = 0; k < take; ++k) {
    const auto& syns = lex.synonyms.at(out[eligible[k]]);
    out[eligible[k]] = syns[rng.bounded(syns.size())];
  }
  return out;
}

// n times: picks a random eligible token, picks one of its synonyms, and
// inserts it at a random position. Iterations without any eligible source
// perform no insertion.
inline TokenSequence random_insertion(const TokenSequence& tokens, int n,
                                      const SynonymLexicon& lex, Rng& rng) {
  if (n < 0) throw std::invalid_argument("random_insertion: n must be >= 0");
  TokenSequence out = tokens;
  for (int round = 0; round < n; ++round) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (lex.eligible(out[i])) eligible.push_back(i);
    if (eligible.empty()) break;
    const auto& syns = lex.synonyms.at(out[eligible[rng.bounded(eligible.size())]]);
    const std::string& synonym = syns[rng.bounded(syns.size())];
    const std::size_t pos = static_cast<std::size_t>(rng.bounded(out.size() + 1));
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(pos), synonym);
  }
  return out;
}

// n times: swaps two uniformly chosen positions (which may coincide).
// The token multiset is preserved.
inline TokenSequence random_swap(const TokenSequence& tokens, int n, Rng& rng) {
  if (n < 0) throw std::invalid_argument("random_swap: n must be >= 0");
  TokenSequence out = tokens;
  if (out.size() < 2) return out;
  for (int round = 0; round < n; ++round) {
    const auto i = static_cast<std::size_t>(rng.bounded(out.size()));
    const auto j = static_cast<std::size_t>(rng.bounded(out.size()));
    std::swap(out[i], out[j]);
  }
  return out;
}

// Keeps each token independently with probability 1-p. If everything was
// deleted, one uniformly chosen token is kept instead.
inline TokenSequence random_deletion(const TokenSequence& tokens, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("random_deletion: p must be in [0, 1]");
  if (tokens.empty()) return {};
  TokenSequence out;
  for (const auto& tok : tokens)
    if (rng.real01() >= p) out.push_back(tok);
  if (out.empty()) out.push_back(tokens[rng.bounded(tokens.size())]);
  return out;
}

namespace detail {

inline corpus::Example child_example(const corpus::Example& parent, const TokenSequence& tokens,
                                     const std::string& suffix) {
  corpus::Example child;
  child.id = parent.id + suffix;
  child.labels = parent.labels;
  corpus::split_input_fields(tokens, &child.title, &child.description);
  return child;
}

inline int edits_for(double alpha, std::size_t len) {
  return std::max(1, static_cast<int>(std::llround(alpha * static_cast<double>(len))));
}

}  // namespace detail

// n_aug copies of the example, each produced by one uniformly chosen edit
// operation with n = max(1, round(alpha * len)). Labels are copied
// verbatim; ids derive from the parent id.
inline std::vector<corpus::Example> eda_augment(const corpus::Example& e, const EdaConfig& cfg,
                                                const SynonymLexicon& lex, Rng& rng) {
  cfg.validate();
  const TokenSequence tokens =
      build_input_text(e, std::numeric_limits<std::size_t>::max());
  if (tokens.empty()) throw std::invalid_argument("eda_augment: example text is empty");

  std::vector<corpus::Example> out;
  out.reserve(static_cast<std::size_t>(cfg.n_aug));
  for (int copy = 0; copy < cfg.n_aug; ++copy) {
    TokenSequence edited;
    switch (rng.bounded(4)) {
      case 0:
        edited = synonym_replacement(tokens, detail::edits_for(cfg.alpha_sr, tokens.size()),
                                     lex, rng);
        break;
      case 1:
        edited = random_insertion(tokens, detail::edits_for(cfg.alpha_ri, tokens.size()),
                                  lex, rng);
        break;
      case 2:
        edited = random_swap(tokens, detail::edits_for(cfg.alpha_rs, tokens.size()), rng);
        break;
      default:
        edited = random_deletion(tokens, cfg.p_rd, rng);
        break;
    }
    out.push_back(detail::child_example(e, edited, "#eda" + std::to_string(copy)));
  }
  return out;
}

// The synonym-only augmenter: replaces N randomly chosen eligible words,
// nothing else.
inline corpus::Example wordnet_augment(const corpus::Example& e, int n_words,
                                       const SynonymLexicon& lex, Rng& rng) {
  if (n_words < 1) throw std::invalid_argument("wordnet_augment: N must be >= 1");
  const TokenSequence tokens =
      build_input_text(e, std::numeric_limits<std::size_t>::max());
  const TokenSequence edited = synonym_replacement(tokens, n_words, lex, rng);
  return detail::child_example(e, edited, "#wn");
}

}  // namespace xmcaug::rule_aug
