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

#include <atomic>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xmcaug/classifier.hpp"
#include "xmcaug/common.hpp"
#include "xmcaug/corpus.hpp"
#include "xmcaug/gen_aug.hpp"
#include "xmcaug/metrics.hpp"
#include "xmcaug/report.hpp"
#include "xmcaug/rule_aug.hpp"
#include "xmcaug/textsim.hpp"

// Reproducible experiment orchestration: every stage reads declared
// upstream artifacts (checksums verified through the run's artifact
// registry), derives its RNG seed from the global seed and the stage
// name, and records a manifest.
namespace xmcaug::pipeline {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Defaults table. Changing a value here changes every stage consistently.
// ---------------------------------------------------------------------------
struct Defaults {
  static constexpr double validation_fraction = 0.1;
  static constexpr int truncate_words = 500;

  static constexpr int pair_min_words = 5;
  static constexpr int pair_max_words = 200;
  static constexpr double pair_sim_threshold = 0.95;
  static constexpr int pair_max_per_group = 20;

  static constexpr double gen_learning_rate = 1e-4;
  static constexpr int gen_epochs = 10;
  static constexpr int gen_batch_size = 32;
  static constexpr int gen_vocab_min_count = 2;

  static constexpr int beam_width = 10;
  static constexpr double temperature = 1.0;
  static constexpr double repetition_penalty = 1.0;
  static constexpr int decode_max_len = 200;

  static constexpr double clf_lr_vanilla = 1e-6;
  static constexpr double clf_lr_label_attention = 5e-6;

  static constexpr double eda_alpha = 0.1;
  static constexpr double eda_p_rd = 0.1;
  static constexpr int eda_n_aug = 1;

  static constexpr double lambda = 0.5;
  static constexpr double propensity_a = 0.55;
  static constexpr double propensity_b = 1.5;

  // Epoch schedule by effective training fraction: 10 epochs at 100% and
  // 50%, 40 at 5%, 100 at 1%.
  static int epochs_for_fraction(double f) {
    if (f > 0.25) return 10;
    if (f > 0.025) return 40;
    return 100;
  }
};

struct PipelineConfig {
  // Paths
  std::string dataset;           // raw training file (jsonl)
  std::string test;              // optional held-out test file
  std::string lexicon;           // synonym table (tsv)
  std::string stopwords;         // stopword list
  std::string media_labels;      // optional; empty = built-in default set
  std::string imported_path;     // external generated text (method=imported)
  std::string out_dir = "run";
  std::string format = "jsonl";
  bool strict = false;

  // Corpus
  double validation_fraction = Defaults::validation_fraction;
  double subsample_fraction = 1.0;
  int truncate_words = Defaults::truncate_words;
  bool media_filter = true;

  // Pairing
  int pair_min_words = Defaults::pair_min_words;
  int pair_max_words = Defaults::pair_max_words;
  double pair_sim_threshold = Defaults::pair_sim_threshold;
  int pair_max_per_group = Defaults::pair_max_per_group;

  // Generator
  gen_aug::GenTrainConfig gen;
  gen_aug::DecodeConfig decode;
  long gen_source_max_label_freq = 0;  // 0 = no tail focus
  long gen_max_sources = 0;            // 0 = unlimited
  int jobs = 0;                        // worker threads; 0 = hardware

  // Classifier
  std::string head = "la";  // "vanilla" | "la"
  double clf_learning_rate = 0.0;  // 0 = per-head default
  int clf_epochs = 0;              // 0 = fraction schedule
  int clf_batch_size = 16;
  std::string clf_optimizer = "adam";
  double clf_weight_decay = 0.0;
  int clf_dim = 64;
  int clf_vocab_min_count = 1;

  // Augmentation
  std::string augmentation = "none";  // none|gda|eda|wordnet|imported
  double lambda = Defaults::lambda;
  rule_aug::EdaConfig eda;
  int wordnet_n = 0;  // 0 = max(1, round(0.1 * len))

  // Evaluation
  std::vector<int> eval_ks = {1, 3, 5};
  double propensity_a = Defaults::propensity_a;
  double propensity_b = Defaults::propensity_b;

  // Sweep grid
  std::vector<double> sweep_fractions = {0.01, 0.05, 0.5, 1.0};
  std::vector<std::string> sweep_methods = {"none", "gda", "eda", "wordnet"};
  std::vector<double> lambda_grid = {0.25, 0.5, 1.0};
  bool sweep_lambda = false;

  std::uint64_t seed = 42;

  ordered_json to_json() const {
    ordered_json j;
    j["dataset"] = dataset;
    j["test"] = test;
    j["lexicon"] = lexicon;
    j["stopwords"] = stopwords;
    j["media_labels"] = media_labels;
    j["imported_path"] = imported_path;
    j["out_dir"] = out_dir;
    j["format"] = format;
    j["strict"] = strict;
    j["validation_fraction"] = validation_fraction;
    j["subsample_fraction"] = subsample_fraction;
    j["truncate_words"] = truncate_words;
    j["media_filter"] = media_filter;
    j["pair_min_words"] = pair_min_words;
    j["pair_max_words"] = pair_max_words;
    j["pair_sim_threshold"] = pair_sim_threshold;
    j["pair_max_per_group"] = pair_max_per_group;
    j["gen"] = {{"learning_rate", gen.learning_rate},
                {"epochs", gen.epochs},
                {"batch_size", gen.batch_size},
                {"vocab_min_count", gen.vocab_min_count},
                {"dim", gen.arch.dim},
                {"layers", gen.arch.layers},
                {"heads", gen.arch.heads},
                {"ff", gen.arch.ff},
                {"max_positions", gen.arch.max_positions}};
    j["decode"] = {{"beam_width", decode.beam_width},
                   {"temperature", decode.temperature},
                   {"repetition_penalty", decode.repetition_penalty},
                   {"max_len", decode.max_len}};
    j["gen_source_max_label_freq"] = gen_source_max_label_freq;
    j["gen_max_sources"] = gen_max_sources;
    j["jobs"] = jobs;
    j["head"] = head;
    j["clf_learning_rate"] = clf_learning_rate;
    j["clf_epochs"] = clf_epochs;
    j["clf_batch_size"] = clf_batch_size;
    j["clf_optimizer"] = clf_optimizer;
    j["clf_weight_decay"] = clf_weight_decay;
    j["clf_dim"] = clf_dim;
    j["clf_vocab_min_count"] = clf_vocab_min_count;
    j["augmentation"] = augmentation;
    j["lambda"] = lambda;
    j["eda"] = {{"alpha_sr", eda.alpha_sr},
                {"alpha_ri", eda.alpha_ri},
                {"alpha_rs", eda.alpha_rs},
                {"p_rd", eda.p_rd},
                {"n_aug", eda.n_aug}};
    j["wordnet_n"] = wordnet_n;
    j["eval_ks"] = eval_ks;
    j["propensity_a"] = propensity_a;
    j["propensity_b"] = propensity_b;
    j["sweep_fractions"] = sweep_fractions;
    j["sweep_methods"] = sweep_methods;
    j["lambda_grid"] = lambda_grid;
    j["sweep_lambda"] = sweep_lambda;
    j["seed"] = seed;
    return j;
  }

  static PipelineConfig from_json(const ordered_json& j) {
    PipelineConfig c;
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("dataset", c.dataset);
    get("test", c.test);
    get("lexicon", c.lexicon);
    get("stopwords", c.stopwords);
    get("media_labels", c.media_labels);
    get("imported_path", c.imported_path);
    get("out_dir", c.out_dir);
    get("format", c.format);
    get("strict", c.strict);
    get("validation_fraction", c.validation_fraction);
    get("subsample_fraction", c.subsample_fraction);
    get("truncate_words", c.truncate_words);
    get("media_filter", c.media_filter);
    get("pair_min_words", c.pair_min_words);
    get("pair_max_words", c.pair_max_words);
    get("pair_sim_threshold", c.pair_sim_threshold);
    get("pair_max_per_group", c.pair_max_per_group);
    if (j.contains("gen")) {
      const auto& g = j.at("gen");
      auto gget = [&](const char* key, auto& field) {
        if (g.contains(key)) field = g.at(key).get<std::decay_t<decltype(field)>>();
      };
      gget("learning_rate", c.gen.learning_rate);
      gget("epochs", c.gen.epochs);
      gget("batch_size", c.gen.batch_size);
      gget("vocab_min_count", c.gen.vocab_min_count);
      gget("dim", c.gen.arch.dim);
      gget("layers", c.gen.arch.layers);
      gget("heads", c.gen.arch.heads);
      gget("ff", c.gen.arch.ff);
      gget("max_positions", c.gen.arch.max_positions);
    }
    if (j.contains("decode")) {
      const auto& g = j.at("decode");
      auto gget = [&](const char* key, auto& field) {
        if (g.contains(key)) field = g.at(key).get<std::decay_t<decltype(field)>>();
      };
      gget("beam_width", c.decode.beam_width);
      gget("temperature", c.decode.temperature);
      gget("repetition_penalty", c.decode.repetition_penalty);
      gget("max_len", c.decode.max_len);
    }
    get("gen_source_max_label_freq", c.gen_source_max_label_freq);
    get("gen_max_sources", c.gen_max_sources);
    get("jobs", c.jobs);
    get("head", c.head);
    get("clf_learning_rate", c.clf_learning_rate);
    get("clf_epochs", c.clf_epochs);
    get("clf_batch_size", c.clf_batch_size);
    get("clf_optimizer", c.clf_optimizer);
    get("clf_weight_decay", c.clf_weight_decay);
    get("clf_dim", c.clf_dim);
    get("clf_vocab_min_count", c.clf_vocab_min_count);
    get("augmentation", c.augmentation);
    get("lambda", c.lambda);
    if (j.contains("eda")) {
      const auto& g = j.at("eda");
      auto gget = [&](const char* key, auto& field) {
        if (g.contains(key)) field = g.at(key).get<std::decay_t<decltype(field)>>();
      };
      gget("alpha_sr", c.eda.alpha_sr);
      gget("alpha_ri", c.eda.alpha_ri);
      gget("alpha_rs", c.eda.alpha_rs);
      gget("p_rd", c.eda.p_rd);
      gget("n_aug", c.eda.n_aug);
    }
    get("wordnet_n", c.wordnet_n);
    get("eval_ks", c.eval_ks);
    get("propensity_a", c.propensity_a);
    get("propensity_b", c.propensity_b);
    get("sweep_fractions", c.sweep_fractions);
    get("sweep_methods", c.sweep_methods);
    get("lambda_grid", c.lambda_grid);
    get("sweep_lambda", c.sweep_lambda);
    get("seed", c.seed);
    return c;
  }

  static PipelineConfig load(const std::string& path) {
    ordered_json j = ordered_json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw PipelineError("malformed config file: " + path);
    return from_json(j);
  }

  double resolved_clf_lr() const {
    if (clf_learning_rate > 0.0) return clf_learning_rate;
    return head == "vanilla" ? Defaults::clf_lr_vanilla : Defaults::clf_lr_label_attention;
  }

  int resolved_clf_epochs() const {
    return clf_epochs > 0 ? clf_epochs : Defaults::epochs_for_fraction(subsample_fraction);
  }

  clf::ClfTrainConfig clf_config() const {
    clf::ClfTrainConfig c;
    c.learning_rate = resolved_clf_lr();
    c.epochs = resolved_clf_epochs();
    c.batch_size = clf_batch_size;
    c.optimizer = clf_optimizer;
    c.seed = derive_seed(seed, "train-clf");
    c.weight_decay = clf_weight_decay;
    c.dim = clf_dim;
    c.truncate_words = truncate_words;
    c.vocab_min_count = clf_vocab_min_count;
    return c;
  }

  int resolved_jobs() const {
    if (jobs > 0) return jobs;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }

  std::vector<std::string> media_label_names() const {
    return media_labels.empty() ? corpus::default_media_labels()
                                : corpus::load_label_list(media_labels);
  }
};

// ---------------------------------------------------------------------------
// Artifact registry and manifests
// ---------------------------------------------------------------------------

inline std::string artifact_path(const PipelineConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

// Per-run registry mapping artifact names to checksums. Stages verify
// their inputs against it before reading.
class ArtifactRegistry {
 public:
  explicit ArtifactRegistry(std::string run_dir) : path_((fs::path(run_dir) / "artifacts.json").string()) {
    if (fs::exists(path_)) {
      auto j = ordered_json::parse(read_file(path_), nullptr, false);
      if (!j.is_discarded())
        for (auto& [k, v] : j.items()) entries_[k] = v.get<std::string>();
    }
  }

  void record(const std::string& name, const std::string& full_path) {
    entries_[name] = to_hex(file_checksum(full_path));
    flush();
  }

  void verify(const std::string& name, const std::string& full_path) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) return;  // not produced by this run; nothing to check
    const std::string actual = to_hex(file_checksum(full_path));
    if (actual != it->second)
      throw PipelineError("artifact '" + name + "' does not match its recorded checksum (" +
                          actual + " vs " + it->second + "); upstream stage must be re-run");
  }

  std::string checksum(const std::string& name) const {
    auto it = entries_.find(name);
    return it == entries_.end() ? "" : it->second;
  }

 private:
  void flush() const {
    ordered_json j;
    for (const auto& [k, v] : entries_) j[k] = v;
    write_file(path_, j.dump(2) + "\n");
  }

  std::string path_;
  std::map<std::string, std::string> entries_;
};

class StageTimer {
 public:
  StageTimer() : start_(std::chrono::steady_clock::now()) {}
  long ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

inline void write_manifest(const PipelineConfig& cfg, const std::string& stage,
                           const ArtifactRegistry& reg, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs, long timing_ms,
                           ordered_json extra = ordered_json::object()) {
  ordered_json m;
  m["stage"] = stage;
  m["seed"] = cfg.seed;
  m["stage_seed"] = derive_seed(cfg.seed, stage);
  m["timing_ms"] = timing_ms;
  auto in = ordered_json::array();
  for (const auto& name : inputs)
    in.push_back({{"name", name}, {"checksum", reg.checksum(name)}});
  m["inputs"] = std::move(in);
  auto outj = ordered_json::array();
  for (const auto& name : outputs)
    outj.push_back({{"name", name}, {"checksum", reg.checksum(name)}});
  m["outputs"] = std::move(outj);
  m["extra"] = std::move(extra);
  m["config"] = cfg.to_json();
  write_file(artifact_path(cfg, stage + ".manifest.json"), m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline void ensure_out_dir(const PipelineConfig& cfg) {
  fs::create_directories(cfg.out_dir);
}

inline void save_label_vocabulary(const corpus::LabelVocabulary& vocab, const std::string& path) {
  std::ostringstream out;
  for (const auto& name : vocab.names()) out << name << '\n';
  write_file(path, out.str());
}

inline corpus::LabelVocabulary load_label_vocabulary(const std::string& path) {
  corpus::LabelVocabulary vocab;
  for (const auto& name : corpus::load_label_list(path)) vocab.add_or_get(name);
  return vocab;
}

// Loads the raw dataset, splits off the validation set, subsamples the
// effective training data, and snapshots train/validation/test plus the
// label vocabulary.
inline void stage_ingest(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  const auto format = corpus::parse_format(cfg.format);

  corpus::Dataset full = corpus::load_dataset(cfg.dataset, format, cfg.strict);

  // The label space covers train and test so indices line up everywhere.
  corpus::Dataset test;
  if (!cfg.test.empty()) {
    corpus::Dataset raw_test = corpus::load_dataset(cfg.test, format, cfg.strict);
    for (const auto& name : raw_test.vocabulary.names()) full.vocabulary.add_or_get(name);
    full.vocabulary.set_frequencies(corpus::label_frequencies(full));
    test.vocabulary = full.vocabulary;
    for (const auto& e : raw_test.examples) {
      corpus::Example copy = e;
      copy.labels.clear();
      for (int l : e.labels)
        copy.labels.push_back(full.vocabulary.find(raw_test.vocabulary.name(l)));
      std::sort(copy.labels.begin(), copy.labels.end());
      test.examples.push_back(std::move(copy));
    }
    test.vocabulary.set_frequencies(corpus::label_frequencies(test));
  }

  auto [train, validation] =
      corpus::split_train_validation(full, cfg.validation_fraction, derive_seed(cfg.seed, "split"));
  if (cfg.subsample_fraction < 1.0)
    train = corpus::subsample(train, cfg.subsample_fraction, derive_seed(cfg.seed, "subsample"));

  corpus::save_dataset(train, artifact_path(cfg, "train.jsonl"));
  corpus::save_dataset(validation, artifact_path(cfg, "validation.jsonl"));
  save_label_vocabulary(full.vocabulary, artifact_path(cfg, "labels.txt"));
  reg.record("train.jsonl", artifact_path(cfg, "train.jsonl"));
  reg.record("validation.jsonl", artifact_path(cfg, "validation.jsonl"));
  reg.record("labels.txt", artifact_path(cfg, "labels.txt"));
  std::vector<std::string> outputs = {"train.jsonl", "validation.jsonl", "labels.txt"};
  if (!cfg.test.empty()) {
    corpus::save_dataset(test, artifact_path(cfg, "test.jsonl"));
    reg.record("test.jsonl", artifact_path(cfg, "test.jsonl"));
    outputs.push_back("test.jsonl");
  }

  ordered_json extra;
  extra["n_full"] = full.size();
  extra["n_train"] = train.size();
  extra["n_validation"] = validation.size();
  extra["n_test"] = test.size();
  extra["num_labels"] = full.vocabulary.size();
  write_manifest(cfg, "ingest", reg, {}, outputs, timer.ms(), std::move(extra));
}

inline corpus::Dataset load_snapshot(const PipelineConfig& cfg, const std::string& name) {
  ArtifactRegistry reg(cfg.out_dir);
  reg.verify(name, artifact_path(cfg, name));
  reg.verify("labels.txt", artifact_path(cfg, "labels.txt"));
  const auto vocab = load_label_vocabulary(artifact_path(cfg, "labels.txt"));
  return corpus::load_dataset_with_vocab(artifact_path(cfg, name), corpus::DatasetFormat::jsonl,
                                         vocab, false);
}

// Prints the label frequency table for a snapshot.
inline void stage_stats(const PipelineConfig& cfg, std::ostream& os, int top = 0) {
  const corpus::Dataset d = load_snapshot(cfg, "train.jsonl");
  const auto counts = corpus::label_frequencies(d);
  os << "examples\t" << d.size() << "\n";
  os << "labels\t" << d.vocabulary.size() << "\n";
  std::vector<int> order(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  const std::size_t limit = top > 0 ? std::min<std::size_t>(order.size(),
                                                            static_cast<std::size_t>(top))
                                    : order.size();
  for (std::size_t i = 0; i < limit; ++i)
    os << d.vocabulary.name(order[i]) << '\t' << counts[static_cast<std::size_t>(order[i])]
       << "\n";
}

// Media-filters the training snapshot and builds same-label-set pairs.
inline void stage_pairs(const PipelineConfig& cfg) {
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  corpus::Dataset train = load_snapshot(cfg, "train.jsonl");

  std::vector<std::string> warnings;
  if (cfg.media_filter)
    train = corpus::filter_media_labels(train, cfg.media_label_names(), &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  corpus::PairConfig pc;
  pc.min_words = cfg.pair_min_words;
  pc.max_words = cfg.pair_max_words;
  pc.sim_threshold = cfg.pair_sim_threshold;
  pc.max_pairs_per_group = cfg.pair_max_per_group;
  pc.seed = derive_seed(cfg.seed, "pairs");
  const corpus::PairSet ps = corpus::make_pairs(train, pc);

  corpus::save_pairs(ps, artifact_path(cfg, "pairs.tsv"));
  reg.record("pairs.tsv", artifact_path(cfg, "pairs.tsv"));
  ordered_json extra;
  extra["n_pairs"] = ps.size();
  extra["n_filtered_examples"] = train.size();
  write_manifest(cfg, "pairs", reg, {"train.jsonl", "labels.txt"}, {"pairs.tsv"}, timer.ms(),
                 std::move(extra));
}

inline void stage_train_gen(const PipelineConfig& cfg) {
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  const corpus::Dataset train = load_snapshot(cfg, "train.jsonl");
  reg.verify("pairs.tsv", artifact_path(cfg, "pairs.tsv"));
  const corpus::PairSet ps = corpus::load_pairs(artifact_path(cfg, "pairs.tsv"));
  const auto pairs = gen_aug::resolve_pairs(train, ps);

  gen_aug::GenTrainConfig gcfg = cfg.gen;
  gcfg.seed = derive_seed(cfg.seed, "train-gen");
  const gen_aug::GeneratorModel model = gen_aug::fit_generator(pairs, gcfg);

  ckpt::save(gen_aug::to_checkpoint(model), artifact_path(cfg, "generator.ckpt"));
  reg.record("generator.ckpt", artifact_path(cfg, "generator.ckpt"));
  ordered_json extra;
  extra["train_loss"] = model.train_loss;
  extra["vocab_size"] = model.vocab.size();
  extra["n_pairs"] = pairs.size();
  write_manifest(cfg, "train-gen", reg, {"train.jsonl", "pairs.tsv"}, {"generator.ckpt"},
                 timer.ms(), std::move(extra));
}

// Generation sources: media-filtered training examples inside the pairing
// word bounds, optionally restricted to examples carrying a label rarer
// than gen_source_max_label_freq.
inline std::vector<std::size_t> select_generation_sources(const PipelineConfig& cfg,
                                                          const corpus::Dataset& train) {
  std::vector<std::string> warnings;
  std::unordered_set<std::string> media_ids;
  corpus::Dataset filtered =
      cfg.media_filter ? corpus::filter_media_labels(train, cfg.media_label_names(), &warnings)
                       : train;
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  std::unordered_set<std::string> keep;
  for (const auto& e : filtered.examples) keep.insert(e.id);

  const auto counts = corpus::label_frequencies(train);
  std::vector<std::size_t> sources;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& e = train.examples[i];
    if (!keep.count(e.id)) continue;
    const auto words = corpus::build_input_text(e, std::numeric_limits<std::size_t>::max()).size();
    if (words < static_cast<std::size_t>(cfg.pair_min_words) ||
        words > static_cast<std::size_t>(cfg.pair_max_words))
      continue;
    if (cfg.gen_source_max_label_freq > 0) {
      std::int64_t rarest = std::numeric_limits<std::int64_t>::max();
      for (int l : e.labels) rarest = std::min(rarest, counts[static_cast<std::size_t>(l)]);
      if (e.labels.empty() || rarest > cfg.gen_source_max_label_freq) continue;
    }
    sources.push_back(i);
    if (cfg.gen_max_sources > 0 &&
        sources.size() >= static_cast<std::size_t>(cfg.gen_max_sources))
      break;
  }
  return sources;
}

// Decodes one label-invariant perturbation per selected source. Sources
// are independent, so the work is sharded across threads; output order is
// by source, so results are identical for any worker count.
inline void stage_generate(const PipelineConfig& cfg) {
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  const corpus::Dataset train = load_snapshot(cfg, "train.jsonl");
  reg.verify("generator.ckpt", artifact_path(cfg, "generator.ckpt"));
  const gen_aug::GeneratorModel model =
      gen_aug::from_checkpoint(ckpt::load(artifact_path(cfg, "generator.ckpt")));

  const auto sources = select_generation_sources(cfg, train);
  std::vector<std::pair<std::string, std::string>> generated(sources.size());

  const int jobs = cfg.resolved_jobs();
  std::vector<std::thread> workers;
  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= sources.size()) break;
      const auto& e = train.examples[sources[i]];
      const std::string text = textsim::join_tokens(
          corpus::build_input_text(e, std::numeric_limits<std::size_t>::max()));
      generated[i] = {e.id, gen_aug::generate(model, text, cfg.decode)};
    }
  };
  for (int t = 1; t < jobs; ++t) workers.emplace_back(work);
  work();
  for (auto& w : workers) w.join();

  gen_aug::save_generated(generated, artifact_path(cfg, "generated.tsv"));
  reg.record("generated.tsv", artifact_path(cfg, "generated.tsv"));
  ordered_json extra;
  extra["n_sources"] = sources.size();
  write_manifest(cfg, "generate", reg, {"train.jsonl", "generator.ckpt"}, {"generated.tsv"},
                 timer.ms(), std::move(extra));
}

// Builds the weighted training set for the configured augmentation method.
inline void stage_augment(const PipelineConfig& cfg) {
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  const corpus::Dataset train = load_snapshot(cfg, "train.jsonl");

  gen_aug::AugmentedDataset aug;
  std::vector<std::string> inputs = {"train.jsonl"};
  if (cfg.augmentation == "none") {
    aug = gen_aug::build_augmented_dataset(train, {}, 1.0);
  } else if (cfg.augmentation == "gda") {
    reg.verify("generated.tsv", artifact_path(cfg, "generated.tsv"));
    const auto gen = gen_aug::import_generated(artifact_path(cfg, "generated.tsv"), train,
                                               cfg.decode.max_len);
    aug = gen_aug::build_augmented_dataset(train, gen, cfg.lambda, gen_aug::Provenance::gda);
    inputs.push_back("generated.tsv");
  } else if (cfg.augmentation == "imported") {
    if (cfg.imported_path.empty())
      throw PipelineError("augmentation=imported requires imported_path");
    const auto gen = gen_aug::import_generated(cfg.imported_path, train, cfg.pair_max_words);
    aug = gen_aug::build_augmented_dataset(train, gen, cfg.lambda,
                                           gen_aug::Provenance::imported);
  } else if (cfg.augmentation == "eda" || cfg.augmentation == "wordnet") {
    if (cfg.lexicon.empty() || cfg.stopwords.empty())
      throw PipelineError("rule-based augmentation requires lexicon and stopwords paths");
    const auto lex = rule_aug::load_lexicon(cfg.lexicon, cfg.stopwords);
    const auto sources = select_generation_sources(cfg, train);
    const std::uint64_t stage_seed = derive_seed(cfg.seed, "augment");
    std::vector<corpus::Example> synthetic;
    for (const std::size_t i : sources) {
      const auto& e = train.examples[i];
      Rng rng(derive_seed(stage_seed, e.id));
      if (cfg.augmentation == "eda") {
        for (auto& child : rule_aug::eda_augment(e, cfg.eda, lex, rng))
          synthetic.push_back(std::move(child));
      } else {
        const auto len = corpus::build_input_text(e, std::numeric_limits<std::size_t>::max()).size();
        const int n = cfg.wordnet_n > 0
                          ? cfg.wordnet_n
                          : std::max(1, static_cast<int>(std::llround(
                                            Defaults::eda_alpha * static_cast<double>(len))));
        synthetic.push_back(rule_aug::wordnet_augment(e, n, lex, rng));
      }
    }
    aug = gen_aug::build_augmented_dataset_from_examples(
        train, synthetic, cfg.lambda,
        cfg.augmentation == "eda" ? gen_aug::Provenance::eda : gen_aug::Provenance::wordnet);
  } else {
    throw PipelineError("unknown augmentation method: " + cfg.augmentation);
  }

  gen_aug::save_augmented(aug, artifact_path(cfg, "augmented.jsonl"));
  reg.record("augmented.jsonl", artifact_path(cfg, "augmented.jsonl"));
  ordered_json extra;
  extra["n_total"] = aug.size();
  extra["n_original"] = train.size();
  extra["n_synthetic"] = aug.size() - train.size();
  extra["lambda"] = cfg.lambda;
  extra["method"] = cfg.augmentation;
  write_manifest(cfg, "augment", reg, inputs, {"augmented.jsonl"}, timer.ms(), std::move(extra));
}

inline void stage_train_clf(const PipelineConfig& cfg) {
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  reg.verify("augmented.jsonl", artifact_path(cfg, "augmented.jsonl"));
  reg.verify("labels.txt", artifact_path(cfg, "labels.txt"));
  const auto vocab = load_label_vocabulary(artifact_path(cfg, "labels.txt"));
  const auto data = gen_aug::load_augmented(artifact_path(cfg, "augmented.jsonl"), vocab);

  const corpus::Dataset validation = load_snapshot(cfg, "validation.jsonl");
  const auto val = gen_aug::build_augmented_dataset(validation, {}, 1.0);

  const auto model = clf::train(data, clf::parse_head(cfg.head), cfg.clf_config(),
                                validation.size() ? &val : nullptr);
  ckpt::save(clf::to_checkpoint(model), artifact_path(cfg, "classifier.ckpt"));
  reg.record("classifier.ckpt", artifact_path(cfg, "classifier.ckpt"));
  ordered_json extra;
  extra["train_loss"] = model.train_loss;
  extra["val_loss"] = model.val_loss;
  extra["n_train"] = data.size();
  extra["head"] = cfg.head;
  write_manifest(cfg, "train-clf", reg, {"augmented.jsonl", "validation.jsonl", "labels.txt"},
                 {"classifier.ckpt"}, timer.ms(), std::move(extra));
}

// Scores the test snapshot (validation when no test set was ingested) and
// writes metrics.csv / metrics.json plus the manifest row for reports.
inline metrics::MetricReport stage_eval(const PipelineConfig& cfg) {
  StageTimer timer;
  ArtifactRegistry reg(cfg.out_dir);
  reg.verify("classifier.ckpt", artifact_path(cfg, "classifier.ckpt"));
  const auto model = clf::from_checkpoint(ckpt::load(artifact_path(cfg, "classifier.ckpt")));

  const std::string eval_name =
      fs::exists(artifact_path(cfg, "test.jsonl")) ? "test.jsonl" : "validation.jsonl";
  const corpus::Dataset test = load_snapshot(cfg, eval_name);
  const corpus::Dataset train = load_snapshot(cfg, "train.jsonl");

  const auto pm = corpus::compute_propensities(
      corpus::label_frequencies(train), static_cast<std::int64_t>(std::max<std::size_t>(1, train.size())),
      cfg.propensity_a, cfg.propensity_b);

  int max_k = 1;
  for (int k : cfg.eval_ks) max_k = std::max(max_k, k);
  if (max_k > model.num_labels)
    throw PipelineError("eval: k exceeds the number of labels");

  std::vector<metrics::RankedPrediction> predictions(test.size());
  const int jobs = cfg.resolved_jobs();
  std::vector<std::thread> workers;
  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= test.size()) break;
      const auto& e = test.examples[i];
      auto ranked = clf::predict_topk(model, e, max_k, cfg.truncate_words);
      metrics::RankedPrediction rp;
      for (const auto& [label, score] : ranked) rp.ranked.push_back(label);
      rp.gold = e.labels;
      predictions[i] = std::move(rp);
    }
  };
  for (int t = 1; t < jobs; ++t) workers.emplace_back(work);
  work();
  for (auto& w : workers) w.join();

  const auto rep = metrics::evaluate(predictions, pm, cfg.eval_ks);

  report::ReportRow row;
  row.method = cfg.augmentation == "none" ? "-" : cfg.augmentation;
  row.train_fraction = cfg.subsample_fraction;
  {
    // n_train = size of the weighted training set actually used.
    const auto vocab = load_label_vocabulary(artifact_path(cfg, "labels.txt"));
    row.n_train = static_cast<long>(
        gen_aug::load_augmented(artifact_path(cfg, "augmented.jsonl"), vocab).size());
  }
  row.weight = cfg.augmentation == "none" ? "NA" : report::format_fixed(cfg.lambda, 2);
  for (const auto& fam : metrics::metric_families())
    for (int k : rep.ks) {
      const std::string col = fam + "@" + std::to_string(k);
      if (std::find(report::metric_columns().begin(), report::metric_columns().end(), col) !=
          report::metric_columns().end())
        row.values[col] = rep.mean(fam, k);
    }

  write_file(artifact_path(cfg, "metrics.csv"), report::render_csv({row}));
  ordered_json mj;
  mj["row"] = {{"method", row.method},
               {"train_fraction", row.train_fraction},
               {"n_train", row.n_train},
               {"weight", row.weight}};
  for (const auto& [col, v] : row.values) mj["metrics"][col] = v;
  mj["evaluated"] = rep.evaluated;
  mj["skipped_empty_gold"] = rep.skipped_empty_gold;
  write_file(artifact_path(cfg, "metrics.json"), mj.dump(2) + "\n");
  reg.record("metrics.csv", artifact_path(cfg, "metrics.csv"));
  reg.record("metrics.json", artifact_path(cfg, "metrics.json"));
  write_manifest(cfg, "eval", reg,
                 {eval_name, "train.jsonl", "classifier.ckpt", "augmented.jsonl"},
                 {"metrics.csv", "metrics.json"}, timer.ms(), mj);
  return rep;
}

// Runs the stages the configured method needs, in order.
inline metrics::MetricReport run_all(const PipelineConfig& cfg) {
  stage_ingest(cfg);
  if (cfg.augmentation == "gda") {
    stage_pairs(cfg);
    stage_train_gen(cfg);
    stage_generate(cfg);
  }
  stage_augment(cfg);
  stage_train_clf(cfg);
  return stage_eval(cfg);
}

// ---------------------------------------------------------------------------
// Sweep + report
// ---------------------------------------------------------------------------

inline std::string cell_name(double fraction, const std::string& method, double lambda,
                             bool with_lambda) {
  std::string name = "f" + report::format_percent_label(fraction);
  name.pop_back();  // strip '%'
  name += "_" + method;
  if (with_lambda && method != "none") {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_w%g", lambda);
    name += buf;
  }
  for (auto& c : name)
    if (c == '.') c = 'p';
  return name;
}

inline report::ReportRow row_from_eval_manifest(const std::string& path) {
  const auto m = ordered_json::parse(read_file(path));
  const auto& extra = m.at("extra");
  report::ReportRow row;
  row.method = extra.at("row").at("method").get<std::string>();
  row.train_fraction = extra.at("row").at("train_fraction").get<double>();
  row.n_train = extra.at("row").at("n_train").get<long>();
  row.weight = extra.at("row").at("weight").get<std::string>();
  for (const auto& [col, v] : extra.at("metrics").items()) row.values[col] = v.get<double>();
  return row;
}

inline void write_report_files(const std::vector<report::ReportRow>& rows,
                               const std::string& csv_path, const std::string& table_path) {
  write_file(csv_path, report::render_csv(rows));
  write_file(table_path, report::render_table(rows));
}

// Grid over training fractions x augmentation methods (x lambda when
// sweep_lambda). Cells are independent runs in their own directories and
// execute in parallel worker threads; the combined report lands at the
// sweep root.
inline std::vector<report::ReportRow> run_sweep(const PipelineConfig& base) {
  struct Cell {
    PipelineConfig cfg;
    std::string dir;
  };
  std::vector<Cell> cells;
  for (const double f : base.sweep_fractions)
    for (const auto& method : base.sweep_methods) {
      const auto lambdas = (base.sweep_lambda && method != "none")
                               ? base.lambda_grid
                               : std::vector<double>{base.lambda};
      for (const double lam : lambdas) {
        PipelineConfig c = base;
        c.subsample_fraction = f;
        c.augmentation = method;
        c.lambda = lam;
        const std::string name = cell_name(f, method, lam, base.sweep_lambda);
        c.out_dir = (fs::path(base.out_dir) / name).string();
        cells.push_back({std::move(c), name});
      }
    }

  fs::create_directories(base.out_dir);
  const int jobs = std::max(1, base.resolved_jobs());
  std::atomic<std::size_t> cursor{0};
  std::vector<std::string> errors(cells.size());
  auto work = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= cells.size()) break;
      try {
        run_all(cells[i].cfg);
      } catch (const std::exception& ex) {
        errors[i] = ex.what();
      }
    }
  };
  std::vector<std::thread> workers;
  for (int t = 1; t < jobs; ++t) workers.emplace_back(work);
  work();
  for (auto& w : workers) w.join();
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (!errors[i].empty())
      throw PipelineError("sweep cell " + cells[i].dir + " failed: " + errors[i]);

  std::vector<report::ReportRow> rows;
  for (const auto& cell : cells)
    rows.push_back(
        row_from_eval_manifest((fs::path(cell.cfg.out_dir) / "eval.manifest.json").string()));
  write_report_files(rows, (fs::path(base.out_dir) / "report.csv").string(),
                     (fs::path(base.out_dir) / "report.txt").string());
  return rows;
}

}  // namespace xmcaug::pipeline
