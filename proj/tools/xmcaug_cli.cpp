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

// Command-line front end for the augmentation-for-XMC pipeline. Every
// subcommand is one reproducible stage; a full experiment is
// ingest -> pairs -> train-gen -> generate -> augment -> train-clf -> eval,
// or just `run` / `sweep`.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xmcaug/pipeline.hpp"

namespace {

using xmcaug::pipeline::PipelineConfig;

struct GlobalArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

PipelineConfig make_config(const GlobalArgs& g) {
  PipelineConfig cfg;
  if (!g.config_path.empty()) cfg = PipelineConfig::load(g.config_path);
  if (!g.out_dir.empty()) cfg.out_dir = g.out_dir;
  if (g.seed_set) cfg.seed = g.seed;
  return cfg;
}

void add_global(CLI::App* app, GlobalArgs& g) {
  app->add_option("--config", g.config_path, "pipeline configuration file (json)");
  app->add_option("--out", g.out_dir, "run directory for artifacts");
  app->add_option("--seed", g.seed, "global seed")->each([&](const std::string&) {
    g.seed_set = true;
  });
}

void print_stats_for_file(const std::string& path, int top) {
  const auto d = xmcaug::corpus::load_dataset(path, xmcaug::corpus::DatasetFormat::jsonl);
  const auto counts = xmcaug::corpus::label_frequencies(d);
  std::cout << "examples\t" << d.size() << "\n";
  std::cout << "labels\t" << d.vocabulary.size() << "\n";
  std::vector<int> order(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });
  const std::size_t limit =
      top > 0 ? std::min<std::size_t>(order.size(), static_cast<std::size_t>(top)) : order.size();
  for (std::size_t i = 0; i < limit; ++i)
    std::cout << d.vocabulary.name(order[i]) << '\t' << counts[static_cast<std::size_t>(order[i])]
              << "\n";
}

}  // namespace

int run_command(int argc, char** argv) {
  CLI::App app{"augmentation toolkit for extreme multi-label classification"};
  app.require_subcommand(1);

  GlobalArgs g;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load, split and snapshot a dataset");
  GlobalArgs g_ingest;
  add_global(ingest, g_ingest);
  std::string in_dataset, in_test;
  double in_val_fraction = -1.0, in_subsample = -1.0;
  bool in_strict = false;
  ingest->add_option("--input", in_dataset, "dataset file (jsonl)");
  ingest->add_option("--test", in_test, "held-out test file (jsonl)");
  ingest->add_option("--validation-fraction", in_val_fraction, "validation split fraction");
  ingest->add_option("--fraction", in_subsample, "training subsample fraction");
  ingest->add_flag("--strict", in_strict, "reject records with empty label sets");

  // stats
  auto* stats = app.add_subcommand("stats", "print the label frequency table");
  GlobalArgs g_stats;
  add_global(stats, g_stats);
  std::string stats_data;
  int stats_top = 0;
  stats->add_option("--data", stats_data, "dataset file; defaults to the run's train snapshot");
  stats->add_option("--top", stats_top, "print only the most frequent labels");

  // pairs
  auto* pairs = app.add_subcommand("pairs", "build same-label-set training pairs");
  GlobalArgs g_pairs;
  add_global(pairs, g_pairs);
  double pair_sim = -1.0;
  int pair_cap = -1, pair_min = -1, pair_max = -1;
  std::string pairs_media;
  bool pairs_no_media = false;
  pairs->add_option("--min-words", pair_min, "minimum text length in words");
  pairs->add_option("--max-words", pair_max, "maximum text length in words");
  pairs->add_option("--sim-threshold", pair_sim, "drop pairs more similar than this");
  pairs->add_option("--max-per-group", pair_cap, "pair cap per label-set group (0 = uncapped)");
  pairs->add_option("--media-labels", pairs_media, "media label list file");
  pairs->add_flag("--no-media-filter", pairs_no_media, "skip the media-label filter");

  // train-gen
  auto* traingen = app.add_subcommand("train-gen", "fit the conditional generator on pairs");
  GlobalArgs g_traingen;
  add_global(traingen, g_traingen);
  double tg_lr = -1.0;
  int tg_epochs = -1, tg_batch = -1, tg_dim = -1, tg_layers = -1;
  traingen->add_option("--lr", tg_lr, "learning rate");
  traingen->add_option("--epochs", tg_epochs, "training epochs");
  traingen->add_option("--batch", tg_batch, "batch size");
  traingen->add_option("--dim", tg_dim, "model width");
  traingen->add_option("--layers", tg_layers, "attention layers");

  // generate
  auto* generate = app.add_subcommand("generate", "decode label-invariant perturbations");
  GlobalArgs g_generate;
  add_global(generate, g_generate);
  int gen_beam = -1, gen_maxlen = -1;
  double gen_temp = -1.0, gen_rep = -1.0;
  long gen_tail_freq = -1, gen_max_sources = -1;
  generate->add_option("--beam", gen_beam, "beam width");
  generate->add_option("--temperature", gen_temp, "logit temperature (0 = hard argmax)");
  generate->add_option("--repetition-penalty", gen_rep, "penalty on already-emitted tokens");
  generate->add_option("--max-len", gen_maxlen, "maximum generated length in words");
  generate->add_option("--max-label-freq", gen_tail_freq,
                       "only generate for examples carrying a label at most this frequent");
  generate->add_option("--max-sources", gen_max_sources, "cap the number of generation sources");

  // augment
  auto* augment = app.add_subcommand("augment", "assemble the weighted training set");
  GlobalArgs g_augment;
  add_global(augment, g_augment);
  std::string aug_method, aug_imported, aug_lexicon, aug_stopwords;
  double aug_weight = -1.0;
  augment->add_option("--method", aug_method, "none|gda|eda|wordnet|imported");
  augment->add_option("--weight", aug_weight, "loss weight for synthetic examples");
  augment->add_option("--imported", aug_imported, "generated-text file for method=imported");
  augment->add_option("--lexicon", aug_lexicon, "synonym lexicon (tsv)");
  augment->add_option("--stopwords", aug_stopwords, "stopword list");

  // train-clf
  auto* trainclf = app.add_subcommand("train-clf", "train a classifier on the augmented set");
  GlobalArgs g_trainclf;
  add_global(trainclf, g_trainclf);
  std::string clf_head;
  double clf_lr = -1.0;
  int clf_epochs = -1, clf_batch = -1, clf_dim = -1;
  trainclf->add_option("--head", clf_head, "vanilla|la");
  trainclf->add_option("--lr", clf_lr, "learning rate (default depends on head)");
  trainclf->add_option("--epochs", clf_epochs, "epochs (default depends on training fraction)");
  trainclf->add_option("--batch", clf_batch, "batch size");
  trainclf->add_option("--dim", clf_dim, "encoder width");

  // eval
  auto* eval = app.add_subcommand("eval", "score the test snapshot and emit metrics");
  GlobalArgs g_eval;
  add_global(eval, g_eval);
  double eval_a = -1.0, eval_b = -1.0;
  eval->add_option("--propensity-a", eval_a, "propensity shape parameter");
  eval->add_option("--propensity-b", eval_b, "propensity offset parameter");

  // run (all stages)
  auto* runall = app.add_subcommand("run", "run every stage for the configured method");
  GlobalArgs g_runall;
  add_global(runall, g_runall);
  std::string run_method;
  runall->add_option("--method", run_method, "none|gda|eda|wordnet|imported");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "grid over training fractions and methods");
  GlobalArgs g_sweep;
  add_global(sweep, g_sweep);
  int sweep_jobs = -1;
  sweep->add_option("--jobs", sweep_jobs, "parallel worker threads");

  // report
  auto* rep = app.add_subcommand("report", "combine eval manifests into one report");
  GlobalArgs g_report;
  add_global(rep, g_report);
  std::vector<std::string> report_inputs;
  rep->add_option("--manifests", report_inputs, "eval manifests or run directories")
      ->required();

  try {
    app.parse(argc, argv);

    if (*ingest) {
      auto cfg = make_config(g_ingest);
      if (!in_dataset.empty()) cfg.dataset = in_dataset;
      if (!in_test.empty()) cfg.test = in_test;
      if (in_val_fraction >= 0.0) cfg.validation_fraction = in_val_fraction;
      if (in_subsample >= 0.0) cfg.subsample_fraction = in_subsample;
      if (in_strict) cfg.strict = true;
      if (cfg.dataset.empty()) throw xmcaug::pipeline::PipelineError("ingest: --input required");
      xmcaug::pipeline::stage_ingest(cfg);
    } else if (*stats) {
      if (!stats_data.empty()) {
        print_stats_for_file(stats_data, stats_top);
      } else {
        auto cfg = make_config(g_stats);
        xmcaug::pipeline::stage_stats(cfg, std::cout, stats_top);
      }
    } else if (*pairs) {
      auto cfg = make_config(g_pairs);
      if (pair_min >= 0) cfg.pair_min_words = pair_min;
      if (pair_max >= 0) cfg.pair_max_words = pair_max;
      if (pair_sim >= 0.0) cfg.pair_sim_threshold = pair_sim;
      if (pair_cap >= 0) cfg.pair_max_per_group = pair_cap;
      if (!pairs_media.empty()) cfg.media_labels = pairs_media;
      if (pairs_no_media) cfg.media_filter = false;
      xmcaug::pipeline::stage_pairs(cfg);
    } else if (*traingen) {
      auto cfg = make_config(g_traingen);
      if (tg_lr > 0.0) cfg.gen.learning_rate = tg_lr;
      if (tg_epochs >= 0) cfg.gen.epochs = tg_epochs;
      if (tg_batch > 0) cfg.gen.batch_size = tg_batch;
      if (tg_dim > 0) cfg.gen.arch.dim = tg_dim;
      if (tg_layers > 0) cfg.gen.arch.layers = tg_layers;
      xmcaug::pipeline::stage_train_gen(cfg);
    } else if (*generate) {
      auto cfg = make_config(g_generate);
      if (gen_beam > 0) cfg.decode.beam_width = gen_beam;
      if (gen_temp >= 0.0) cfg.decode.temperature = gen_temp;
      if (gen_rep >= 1.0) cfg.decode.repetition_penalty = gen_rep;
      if (gen_maxlen > 0) cfg.decode.max_len = gen_maxlen;
      if (gen_tail_freq >= 0) cfg.gen_source_max_label_freq = gen_tail_freq;
      if (gen_max_sources >= 0) cfg.gen_max_sources = gen_max_sources;
      xmcaug::pipeline::stage_generate(cfg);
    } else if (*augment) {
      auto cfg = make_config(g_augment);
      if (!aug_method.empty()) cfg.augmentation = aug_method;
      if (aug_weight > 0.0) cfg.lambda = aug_weight;
      if (!aug_imported.empty()) cfg.imported_path = aug_imported;
      if (!aug_lexicon.empty()) cfg.lexicon = aug_lexicon;
      if (!aug_stopwords.empty()) cfg.stopwords = aug_stopwords;
      xmcaug::pipeline::stage_augment(cfg);
    } else if (*trainclf) {
      auto cfg = make_config(g_trainclf);
      if (!clf_head.empty()) cfg.head = clf_head;
      if (clf_lr > 0.0) cfg.clf_learning_rate = clf_lr;
      if (clf_epochs > 0) cfg.clf_epochs = clf_epochs;
      if (clf_batch > 0) cfg.clf_batch_size = clf_batch;
      if (clf_dim > 0) cfg.clf_dim = clf_dim;
      xmcaug::pipeline::stage_train_clf(cfg);
    } else if (*eval) {
      auto cfg = make_config(g_eval);
      if (eval_a > 0.0) cfg.propensity_a = eval_a;
      if (eval_b >= 0.0) cfg.propensity_b = eval_b;
      xmcaug::pipeline::stage_eval(cfg);
    } else if (*runall) {
      auto cfg = make_config(g_runall);
      if (!run_method.empty()) cfg.augmentation = run_method;
      xmcaug::pipeline::run_all(cfg);
    } else if (*sweep) {
      auto cfg = make_config(g_sweep);
      if (sweep_jobs > 0) cfg.jobs = sweep_jobs;
      const auto rows = xmcaug::pipeline::run_sweep(cfg);
      std::cout << xmcaug::report::render_table(rows);
    } else if (*rep) {
      auto cfg = make_config(g_report);
      std::vector<xmcaug::report::ReportRow> rows;
      for (const auto& input : report_inputs) {
        std::filesystem::path p(input);
        if (std::filesystem::is_directory(p)) p /= "eval.manifest.json";
        rows.push_back(xmcaug::pipeline::row_from_eval_manifest(p.string()));
      }
      std::cout << xmcaug::report::render_table(rows);
      if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        xmcaug::pipeline::write_report_files(
            rows, (std::filesystem::path(cfg.out_dir) / "report.csv").string(),
            (std::filesystem::path(cfg.out_dir) / "report.txt").string());
      }
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int main(int argc, char** argv) { return run_command(argc, argv); }
