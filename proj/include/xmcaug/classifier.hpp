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
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xmcaug/checkpoint.hpp"
#include "xmcaug/common.hpp"
#include "xmcaug/corpus.hpp"
#include "xmcaug/gen_aug.hpp"
#include "xmcaug/nn.hpp"
#include "xmcaug/textsim.hpp"

// Multi-label classifiers over a shared token encoder: a pooled "vanilla"
// head scoring one document vector, and a label-attention head that builds
// a per-label document vector from the token encodings. Trained with
// weighted binary cross entropy and exact analytic gradients.
namespace xmcaug::clf {

using nn::Mat;

struct ClfError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kProbClamp = 1e-12;

class ClfVocab {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kUnk = 2;

  ClfVocab() {
    for (const char* s : {"<cls>", "<sep>", "<unk>"}) add(s);
  }

  int add(const std::string& word) {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(words_.size());
    words_.push_back(word);
    index_.emplace(word, id);
    return id;
  }

  int lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Token embedding table plus the pooling affine map producing the
// document vector e = tanh(W * mean(H) + b).
struct EncoderParams {
  Mat emb;     // V×d
  Mat pool_w;  // d×d
  Mat pool_b;  // 1×d
  int cls_id = ClfVocab::kCls;
  int sep_id = ClfVocab::kSep;
  int unk_id = ClfVocab::kUnk;
};

struct VanillaHead {
  Mat w;  // K×d
  Mat b;  // 1×K
};

struct LabelAttentionHead {
  Mat attn;  // K×d attention vectors
  Mat w;     // K×d per-label output weights
  Mat b;     // 1×K
};

enum class HeadKind { vanilla, label_attention };

inline HeadKind parse_head(const std::string& tag) {
  if (tag == "vanilla") return HeadKind::vanilla;
  if (tag == "la" || tag == "label_attention") return HeadKind::label_attention;
  throw ClfError("unknown head kind: " + tag);
}

inline std::string head_name(HeadKind k) {
  return k == HeadKind::vanilla ? "vanilla" : "label_attention";
}

struct ClfTrainConfig {
  double learning_rate = 1e-6;
  int epochs = 10;
  int batch_size = 16;
  std::string optimizer = "adam";
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
  int dim = 64;
  int truncate_words = 500;
  int vocab_min_count = 1;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ClfError("learning_rate must be > 0");
    if (epochs < 1) throw ClfError("epochs must be >= 1");
    if (batch_size < 1 || dim < 1 || truncate_words < 1) throw ClfError("invalid config");
    nn::parse_optimizer(optimizer);
  }
};

struct ClassifierModel {
  ClfVocab vocab;
  EncoderParams enc;
  HeadKind kind = HeadKind::vanilla;
  VanillaHead vanilla;
  LabelAttentionHead la;
  int num_labels = 0;
  int dim = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;

  template <class F>
  void visit(F&& f) {
    f("emb", enc.emb);
    f("pool_w", enc.pool_w);
    f("pool_b", enc.pool_b);
    if (kind == HeadKind::vanilla) {
      f("head.w", vanilla.w);
      f("head.b", vanilla.b);
    } else {
      f("head.attn", la.attn);
      f("head.w", la.w);
      f("head.b", la.b);
    }
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<ClassifierModel*>(this)->visit(
        [&](const std::string& name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
  }

  std::vector<nn::ParamRef> refs() {
    std::vector<nn::ParamRef> out;
    visit([&](const std::string& name, Mat& m) { out.push_back({name, &m}); });
    return out;
  }
};

// Gradients mirror the active parameter set of a model.
struct ClassifierGrads {
  Mat emb, pool_w, pool_b;
  Mat head_attn, head_w, head_b;
  HeadKind kind = HeadKind::vanilla;

  explicit ClassifierGrads(const ClassifierModel& m) : kind(m.kind) {
    emb = Mat(m.enc.emb.rows, m.enc.emb.cols);
    pool_w = Mat(m.enc.pool_w.rows, m.enc.pool_w.cols);
    pool_b = Mat(m.enc.pool_b.rows, m.enc.pool_b.cols);
    if (m.kind == HeadKind::vanilla) {
      head_w = Mat(m.vanilla.w.rows, m.vanilla.w.cols);
      head_b = Mat(m.vanilla.b.rows, m.vanilla.b.cols);
    } else {
      head_attn = Mat(m.la.attn.rows, m.la.attn.cols);
      head_w = Mat(m.la.w.rows, m.la.w.cols);
      head_b = Mat(m.la.b.rows, m.la.b.cols);
    }
  }

  std::vector<nn::ParamRef> refs() {
    std::vector<nn::ParamRef> out;
    out.push_back({"emb", &emb});
    out.push_back({"pool_w", &pool_w});
    out.push_back({"pool_b", &pool_b});
    if (kind != HeadKind::vanilla) out.push_back({"head.attn", &head_attn});
    out.push_back({"head.w", &head_w});
    out.push_back({"head.b", &head_b});
    return out;
  }

  void zero_all() {
    for (auto& r : refs()) r.mat->zero();
  }
};

// Token rows plus the pooled document vector; caches the pieces the
// backward pass needs.
struct Encoding {
  std::vector<int> ids;       // [CLS] tokens... [SEP]
  Mat h;                      // T×d embedding rows
  std::vector<double> mean;   // column means of h
  std::vector<double> z;      // pool_w * mean + pool_b
  std::vector<double> e;      // tanh(z)
};

// Embedding lookup with UNK fallback; [CLS] is prepended and [SEP]
// appended, so T = |tokens| + 2.
inline Encoding encode(const textsim::TokenSequence& tokens, const ClfVocab& vocab,
                       const EncoderParams& p) {
  Encoding enc;
  enc.ids.reserve(tokens.size() + 2);
  enc.ids.push_back(p.cls_id);
  for (const auto& tok : tokens) enc.ids.push_back(vocab.lookup(tok));
  enc.ids.push_back(p.sep_id);

  const int t_len = static_cast<int>(enc.ids.size());
  const int d = p.emb.cols;
  enc.h = Mat(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    auto src = p.emb.row(enc.ids[static_cast<std::size_t>(t)]);
    std::copy(src.begin(), src.end(), enc.h.row(t).begin());
  }

  enc.mean.assign(static_cast<std::size_t>(d), 0.0);
  for (int t = 0; t < t_len; ++t) nn::axpy(1.0 / t_len, enc.h.row(t), enc.mean);

  enc.z.assign(static_cast<std::size_t>(d), 0.0);
  nn::matvec_t(p.pool_w, enc.mean, enc.z);
  for (int c = 0; c < d; ++c) enc.z[static_cast<std::size_t>(c)] +=
      p.pool_b.data[static_cast<std::size_t>(c)];

  enc.e.resize(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) enc.e[static_cast<std::size_t>(c)] =
      std::tanh(enc.z[static_cast<std::size_t>(c)]);
  return enc;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-label scores s_k = w_k . e + b_k and probabilities sigma(s_k).
inline std::pair<std::vector<double>, std::vector<double>> vanilla_forward(
    const std::vector<double>& e, const VanillaHead& head) {
  if (static_cast<int>(e.size()) != head.w.cols) throw ClfError("vanilla_forward: dim mismatch");
  const int k_count = head.w.rows;
  std::vector<double> scores(static_cast<std::size_t>(k_count));
  std::vector<double> probs(static_cast<std::size_t>(k_count));
  for (int k = 0; k < k_count; ++k) {
    const double s = nn::dot(head.w.row(k), e) + head.b.data[static_cast<std::size_t>(k)];
    scores[static_cast<std::size_t>(k)] = s;
    probs[static_cast<std::size_t>(k)] = sigmoid(s);
  }
  return {std::move(scores), std::move(probs)};
}

struct LabelAttentionResult {
  Mat alpha;  // T×K, each column sums to 1
  Mat m;      // K×d label-specific document vectors
  std::vector<double> scores;
  std::vector<double> probs;
};

// alpha[t][k] = softmax_t(h_t . attn_k); m_k = sum_t alpha[t][k] h_t;
// s_k = w_k . m_k + b_k.
inline LabelAttentionResult label_attention_forward(const Mat& h,
                                                    const LabelAttentionHead& head) {
  if (h.cols != head.attn.cols) throw ClfError("label_attention_forward: dim mismatch");
  if (h.rows < 1) throw ClfError("label_attention_forward: empty input");
  const int t_len = h.rows;
  const int d = h.cols;
  const int k_count = head.attn.rows;

  LabelAttentionResult out;
  out.alpha = Mat(t_len, k_count);
  out.m = Mat(k_count, d);
  out.scores.resize(static_cast<std::size_t>(k_count));
  out.probs.resize(static_cast<std::size_t>(k_count));

  std::vector<double> col(static_cast<std::size_t>(t_len));
  for (int k = 0; k < k_count; ++k) {
    for (int t = 0; t < t_len; ++t) col[static_cast<std::size_t>(t)] =
        nn::dot(h.row(t), head.attn.row(k));
    nn::softmax(col);
    auto mk = out.m.row(k);
    for (int t = 0; t < t_len; ++t) {
      out.alpha.at(t, k) = col[static_cast<std::size_t>(t)];
      nn::axpy(col[static_cast<std::size_t>(t)], h.row(t), mk);
    }
    const double s = nn::dot(head.w.row(k), mk) + head.b.data[static_cast<std::size_t>(k)];
    out.scores[static_cast<std::size_t>(k)] = s;
    out.probs[static_cast<std::size_t>(k)] = sigmoid(s);
  }
  return out;
}

// lambda * (1/K) * sum_k -( y_k ln p_k + (1-y_k) ln(1-p_k) ), with p
// clamped into [kProbClamp, 1-kProbClamp].
inline double weighted_bce_loss(const std::vector<double>& probs, const std::vector<char>& y,
                                double lambda) {
  if (probs.size() != y.size()) throw ClfError("weighted_bce_loss: size mismatch");
  if (probs.empty()) throw ClfError("weighted_bce_loss: empty prediction");
  double sum = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double p = std::min(1.0 - kProbClamp, std::max(kProbClamp, probs[k]));
    sum += y[k] ? -std::log(p) : -std::log(1.0 - p);
  }
  return lambda * sum / static_cast<double>(probs.size());
}

// A tokenized training instance.
struct ClfInstance {
  std::vector<int> token_ids;  // without specials; encode() adds them
  std::vector<int> labels;     // sorted indices
  double weight = 1.0;
};

namespace detail {

inline std::vector<char> densify(const std::vector<int>& labels, int k_count) {
  std::vector<char> y(static_cast<std::size_t>(k_count), 0);
  for (int l : labels) y.at(static_cast<std::size_t>(l)) = 1;
  return y;
}

// d(loss)/d(score) for one label under the clamped BCE; zero in the
// clamped regions so analytic and finite-difference gradients agree
// everywhere.
inline double score_grad(double prob, char y, double lambda_over_k) {
  if (prob <= kProbClamp || prob >= 1.0 - kProbClamp) return 0.0;
  return lambda_over_k * (prob - static_cast<double>(y));
}

inline Encoding encode_ids(const std::vector<int>& token_ids, const ClassifierModel& model) {
  // Same as encode(), starting from pre-looked-up ids.
  Encoding enc;
  enc.ids.reserve(token_ids.size() + 2);
  enc.ids.push_back(model.enc.cls_id);
  for (int id : token_ids) enc.ids.push_back(id);
  enc.ids.push_back(model.enc.sep_id);

  const int t_len = static_cast<int>(enc.ids.size());
  const int d = model.enc.emb.cols;
  enc.h = Mat(t_len, d);
  for (int t = 0; t < t_len; ++t) {
    auto src = model.enc.emb.row(enc.ids[static_cast<std::size_t>(t)]);
    std::copy(src.begin(), src.end(), enc.h.row(t).begin());
  }
  if (model.kind == HeadKind::vanilla) {
    enc.mean.assign(static_cast<std::size_t>(d), 0.0);
    for (int t = 0; t < t_len; ++t) nn::axpy(1.0 / t_len, enc.h.row(t), enc.mean);
    enc.z.assign(static_cast<std::size_t>(d), 0.0);
    nn::matvec_t(model.enc.pool_w, enc.mean, enc.z);
    for (int c = 0; c < d; ++c) enc.z[static_cast<std::size_t>(c)] +=
        model.enc.pool_b.data[static_cast<std::size_t>(c)];
    enc.e.resize(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c) enc.e[static_cast<std::size_t>(c)] =
        std::tanh(enc.z[static_cast<std::size_t>(c)]);
  }
  return enc;
}

}  // namespace detail

// Mean weighted BCE over the batch; exact gradients for every parameter of
// the active head and the encoder are accumulated into `grads` when
// non-null.
inline double batch_loss(const ClassifierModel& model, const std::vector<ClfInstance>& batch,
                         ClassifierGrads* grads = nullptr) {
  if (batch.empty()) throw ClfError("batch_loss: empty batch");
  const int k_count = model.num_labels;
  const int d = model.dim;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;

  for (const auto& inst : batch) {
    const Encoding enc = detail::encode_ids(inst.token_ids, model);
    const auto y = detail::densify(inst.labels, k_count);
    const double lk = inst.weight / static_cast<double>(k_count);
    const int t_len = static_cast<int>(enc.ids.size());

    if (model.kind == HeadKind::vanilla) {
      auto [scores, probs] = vanilla_forward(enc.e, model.vanilla);
      total += weighted_bce_loss(probs, y, inst.weight) * inv_batch;
      if (!grads) continue;

      std::vector<double> de(static_cast<std::size_t>(d), 0.0);
      for (int k = 0; k < k_count; ++k) {
        const double g =
            detail::score_grad(probs[static_cast<std::size_t>(k)], y[static_cast<std::size_t>(k)],
                               lk) * inv_batch;
        if (g == 0.0) continue;
        grads->head_b.data[static_cast<std::size_t>(k)] += g;
        nn::axpy(g, enc.e, grads->head_w.row(k));
        nn::axpy(g, model.vanilla.w.row(k), de);
      }
      // back through e = tanh(z), z = pool_w * mean + pool_b
      std::vector<double> dz(static_cast<std::size_t>(d));
      for (int c = 0; c < d; ++c)
        dz[static_cast<std::size_t>(c)] = de[static_cast<std::size_t>(c)] *
            (1.0 - enc.e[static_cast<std::size_t>(c)] * enc.e[static_cast<std::size_t>(c)]);
      std::vector<double> dmean(static_cast<std::size_t>(d), 0.0);
      for (int r = 0; r < d; ++r) {
        nn::axpy(enc.mean[static_cast<std::size_t>(r)], dz, grads->pool_w.row(r));
        dmean[static_cast<std::size_t>(r)] = nn::dot(model.enc.pool_w.row(r), dz);
      }
      for (int c = 0; c < d; ++c) grads->pool_b.data[static_cast<std::size_t>(c)] +=
          dz[static_cast<std::size_t>(c)];
      const double inv_t = 1.0 / static_cast<double>(t_len);
      for (int t = 0; t < t_len; ++t)
        nn::axpy(inv_t, dmean, grads->emb.row(enc.ids[static_cast<std::size_t>(t)]));
    } else {
      const auto res = label_attention_forward(enc.h, model.la);
      total += weighted_bce_loss(res.probs, y, inst.weight) * inv_batch;
      if (!grads) continue;

      Mat dh(t_len, d);
      std::vector<double> dm(static_cast<std::size_t>(d));
      std::vector<double> dalpha(static_cast<std::size_t>(t_len));
      std::vector<double> dscore_attn(static_cast<std::size_t>(t_len));
      for (int k = 0; k < k_count; ++k) {
        const double g =
            detail::score_grad(res.probs[static_cast<std::size_t>(k)],
                               y[static_cast<std::size_t>(k)], lk) * inv_batch;
        if (g == 0.0) continue;
        grads->head_b.data[static_cast<std::size_t>(k)] += g;
        nn::axpy(g, res.m.row(k), grads->head_w.row(k));
        // dm_k = g * w_k
        for (int c = 0; c < d; ++c) dm[static_cast<std::size_t>(c)] =
            g * model.la.w.at(k, c);
        // alpha backward: dalpha_t = dm . h_t ; softmax jacobian
        double inner = 0.0;
        for (int t = 0; t < t_len; ++t) {
          dalpha[static_cast<std::size_t>(t)] = nn::dot(dm, enc.h.row(t));
          inner += res.alpha.at(t, k) * dalpha[static_cast<std::size_t>(t)];
        }
        for (int t = 0; t < t_len; ++t)
          dscore_attn[static_cast<std::size_t>(t)] =
              res.alpha.at(t, k) * (dalpha[static_cast<std::size_t>(t)] - inner);
        for (int t = 0; t < t_len; ++t) {
          const double a = res.alpha.at(t, k);
          const double ds = dscore_attn[static_cast<std::size_t>(t)];
          // m_k = sum alpha h_t and score_t = h_t . attn_k
          auto dht = dh.row(t);
          nn::axpy(a, dm, dht);
          nn::axpy(ds, model.la.attn.row(k), dht);
          nn::axpy(ds, enc.h.row(t), grads->head_attn.row(k));
        }
      }
      for (int t = 0; t < t_len; ++t)
        nn::axpy(1.0, dh.row(t), grads->emb.row(enc.ids[static_cast<std::size_t>(t)]));
    }
  }
  return total;
}

// Ranked top-k labels as (label index, probability), ties broken by the
// lower label index. Ranking uses raw scores; sigma is monotone so the
// order is identical.
inline std::vector<std::pair<int, double>> predict_topk_tokens(
    const ClassifierModel& model, const textsim::TokenSequence& tokens, int k) {
  if (k > model.num_labels) throw ClfError("predict_topk: k exceeds number of labels");
  if (k < 1) throw ClfError("predict_topk: k must be >= 1");
  const Encoding enc = detail::encode_ids(
      [&] {
        std::vector<int> ids;
        ids.reserve(tokens.size());
        for (const auto& tok : tokens) ids.push_back(model.vocab.lookup(tok));
        return ids;
      }(),
      model);

  std::vector<double> scores;
  if (model.kind == HeadKind::vanilla) {
    scores = vanilla_forward(enc.e, model.vanilla).first;
  } else {
    scores = label_attention_forward(enc.h, model.la).scores;
  }
  std::vector<int> idx(static_cast<std::size_t>(model.num_labels));
  for (int i = 0; i < model.num_labels; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    const double sa = scores[static_cast<std::size_t>(a)];
    const double sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  std::vector<std::pair<int, double>> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    out.emplace_back(idx[static_cast<std::size_t>(i)],
                     sigmoid(scores[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]));
  return out;
}

inline std::vector<std::pair<int, double>> predict_topk(const ClassifierModel& model,
                                                        const corpus::Example& e, int k,
                                                        int truncate_words = 500) {
  return predict_topk_tokens(model, corpus::build_input_text(
                                        e, static_cast<std::size_t>(truncate_words)), k);
}

// Mini-batch training of the weighted loss. Zero-weight examples are
// dropped up front, so a lambda-0 synthetic set trains exactly like the
// original data alone. Deterministic per seed.
inline ClassifierModel train(const gen_aug::AugmentedDataset& data, HeadKind kind,
                             const ClfTrainConfig& cfg,
                             const gen_aug::AugmentedDataset* validation = nullptr) {
  cfg.validate();
  if (data.examples.empty()) throw ClfError("train: empty dataset");

  ClassifierModel model;
  model.kind = kind;
  model.dim = cfg.dim;
  model.num_labels = data.vocabulary.size();
  if (model.num_labels < 1) throw ClfError("train: dataset has no labels");

  // Tokenize once; build the word vocabulary from the training texts.
  std::unordered_map<std::string, int> counts;
  std::vector<textsim::TokenSequence> token_cache;
  token_cache.reserve(data.examples.size());
  for (const auto& we : data.examples) {
    token_cache.push_back(corpus::build_input_text(
        we.example, static_cast<std::size_t>(cfg.truncate_words)));
    for (const auto& tok : token_cache.back()) ++counts[tok];
  }
  for (std::size_t i = 0; i < data.examples.size(); ++i)
    for (const auto& tok : token_cache[i])
      if (counts[tok] >= cfg.vocab_min_count) model.vocab.add(tok);

  Rng rng(derive_seed(cfg.seed, "clf_init"));
  model.enc.emb = Mat(model.vocab.size(), cfg.dim);
  model.enc.emb.fill_gaussian(rng, 0.05);
  model.enc.pool_w = Mat(cfg.dim, cfg.dim);
  model.enc.pool_w.fill_gaussian(rng, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  model.enc.pool_b = Mat(1, cfg.dim);
  if (kind == HeadKind::vanilla) {
    model.vanilla.w = Mat(model.num_labels, cfg.dim);
    model.vanilla.w.fill_gaussian(rng, 0.05);
    model.vanilla.b = Mat(1, model.num_labels);
  } else {
    model.la.attn = Mat(model.num_labels, cfg.dim);
    model.la.attn.fill_gaussian(rng, 0.05);
    model.la.w = Mat(model.num_labels, cfg.dim);
    model.la.w.fill_gaussian(rng, 0.05);
    model.la.b = Mat(1, model.num_labels);
  }

  std::vector<ClfInstance> instances;
  instances.reserve(data.examples.size());
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    const auto& we = data.examples[i];
    if (we.weight == 0.0) continue;
    if (we.weight < 0.0) throw ClfError("train: negative example weight");
    ClfInstance inst;
    inst.weight = we.weight;
    inst.labels = we.example.labels;
    inst.token_ids.reserve(token_cache[i].size());
    for (const auto& tok : token_cache[i]) inst.token_ids.push_back(model.vocab.lookup(tok));
    instances.push_back(std::move(inst));
  }
  if (instances.empty()) throw ClfError("train: no examples with positive weight");

  std::vector<ClfInstance> val_instances;
  if (validation) {
    for (const auto& we : validation->examples) {
      ClfInstance inst;
      inst.weight = we.weight;
      inst.labels = we.example.labels;
      const auto tokens = corpus::build_input_text(
          we.example, static_cast<std::size_t>(cfg.truncate_words));
      for (const auto& tok : tokens) inst.token_ids.push_back(model.vocab.lookup(tok));
      val_instances.push_back(std::move(inst));
    }
  }

  nn::Optimizer opt(nn::parse_optimizer(cfg.optimizer), cfg.learning_rate, cfg.weight_decay);
  ClassifierGrads grads(model);
  auto param_refs = model.refs();
  auto grad_refs = grads.refs();

  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(cfg.seed, "clf_batches"));

  std::vector<ClfInstance> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(instances[order[i]]);
      grads.zero_all();
      const double loss = batch_loss(model, batch, &grads);
      if (!std::isfinite(loss))
        throw ClfError("train: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(batch.size());
      seen += batch.size();
      opt.step(param_refs, grad_refs);
    }
    model.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    if (!val_instances.empty()) {
      double vl = 0.0;
      for (const auto& inst : val_instances) vl += batch_loss(model, {inst});
      model.val_loss.push_back(vl / static_cast<double>(val_instances.size()));
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Checkpointing (same container as the generator)
// ---------------------------------------------------------------------------

inline ckpt::Checkpoint to_checkpoint(const ClassifierModel& m) {
  ckpt::Checkpoint c;
  c.kind = "classifier";
  c.meta["head"] = head_name(m.kind);
  c.meta["dim"] = m.dim;
  c.meta["num_labels"] = m.num_labels;
  c.meta["vocab"] = m.vocab.words();
  c.meta["train_loss"] = m.train_loss;
  c.meta["val_loss"] = m.val_loss;
  m.visit([&](const std::string& name, const Mat& mat) { c.tensors.emplace_back(name, mat); });
  return c;
}

inline ClassifierModel from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != "classifier") throw ClfError("checkpoint is not a classifier model");
  ClassifierModel m;
  m.kind = c.meta.at("head").get<std::string>() == "vanilla" ? HeadKind::vanilla
                                                             : HeadKind::label_attention;
  m.dim = c.meta.at("dim").get<int>();
  m.num_labels = c.meta.at("num_labels").get<int>();
  const auto words = c.meta.at("vocab").get<std::vector<std::string>>();
  for (std::size_t i = 3; i < words.size(); ++i) m.vocab.add(words[i]);
  if (m.vocab.words() != words) throw ClfError("checkpoint vocabulary is inconsistent");
  m.train_loss = c.meta.at("train_loss").get<std::vector<double>>();
  m.val_loss = c.meta.at("val_loss").get<std::vector<double>>();

  // Allocate then fill in visit order.
  m.enc.emb = Mat(m.vocab.size(), m.dim);
  m.enc.pool_w = Mat(m.dim, m.dim);
  m.enc.pool_b = Mat(1, m.dim);
  if (m.kind == HeadKind::vanilla) {
    m.vanilla.w = Mat(m.num_labels, m.dim);
    m.vanilla.b = Mat(1, m.num_labels);
  } else {
    m.la.attn = Mat(m.num_labels, m.dim);
    m.la.w = Mat(m.num_labels, m.dim);
    m.la.b = Mat(1, m.num_labels);
  }
  std::size_t i = 0;
  m.visit([&](const std::string& name, Mat& mat) {
    if (i >= c.tensors.size() || c.tensors[i].first != name)
      throw ClfError("checkpoint tensor mismatch at '" + name + "'");
    const Mat& src = c.tensors[i].second;
    if (src.rows != mat.rows || src.cols != mat.cols)
      throw ClfError("checkpoint tensor shape mismatch at '" + name + "'");
    mat = src;
    ++i;
  });
  if (i != c.tensors.size()) throw ClfError("checkpoint has extra tensors");
  return m;
}

}  // namespace xmcaug::clf
