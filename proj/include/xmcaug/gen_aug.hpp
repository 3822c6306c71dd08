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
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xmcaug/checkpoint.hpp"
#include "xmcaug/common.hpp"
#include "xmcaug/corpus.hpp"
#include "xmcaug/nn.hpp"
#include "xmcaug/textsim.hpp"

// Conditional text generation for label-invariant augmentation: a small
// causal self-attention language model trained on concatenated
// [source, separator, target] pairs, decoded with beam search.
namespace xmcaug::gen_aug {

using nn::Mat;

struct GenError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Word-level vocabulary with four reserved specials at fixed slots.
class GenVocab {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kSep = 2;  // source/target boundary
  static constexpr int kUnk = 3;

  GenVocab() {
    for (const char* s : {"<bos>", "<eos>", "<sep>", "<unk>"}) add(s);
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
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

struct TextPair {
  std::string source;
  std::string target;
};

// Resolves a PairSet against its dataset into raw text pairs.
inline std::vector<TextPair> resolve_pairs(const corpus::Dataset& d, const corpus::PairSet& ps) {
  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < d.size(); ++i) by_id.emplace(d.examples[i].id, i);
  std::vector<TextPair> out;
  out.reserve(ps.size());
  for (const auto& [src, tgt] : ps.pairs) {
    auto si = by_id.find(src);
    auto ti = by_id.find(tgt);
    if (si == by_id.end()) throw GenError("pair references unknown source id '" + src + "'");
    if (ti == by_id.end()) throw GenError("pair references unknown target id '" + tgt + "'");
    const auto no_cap = std::numeric_limits<std::size_t>::max();
    out.push_back({textsim::join_tokens(corpus::build_input_text(d.examples[si->second], no_cap)),
                   textsim::join_tokens(corpus::build_input_text(d.examples[ti->second], no_cap))});
  }
  return out;
}

// Words appearing at least min_count times across the pair texts, in first
// occurrence order, preceded by the specials.
inline GenVocab build_gen_vocab(const std::vector<TextPair>& pairs, int min_count = 2) {
  std::unordered_map<std::string, int> counts;
  std::vector<std::string> order;
  for (const auto& p : pairs) {
    for (const std::string text : {p.source, p.target}) {
      for (auto& tok : textsim::tokenize(text)) {
        if (++counts[tok] == 1) order.push_back(tok);
      }
    }
  }
  GenVocab vocab;
  for (const auto& w : order)
    if (counts[w] >= min_count) vocab.add(w);
  return vocab;
}

struct GenArch {
  int dim = 64;
  int layers = 1;
  int heads = 2;
  int ff = 128;
  int max_positions = 512;

  void validate() const {
    if (dim < 1 || layers < 1 || heads < 1 || ff < 1 || max_positions < 4)
      throw GenError("invalid generator architecture");
    if (dim % heads != 0) throw GenError("dim must be divisible by heads");
  }
};

struct GenTrainConfig {
  double learning_rate = 1e-4;
  int epochs = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int vocab_min_count = 2;
  GenArch arch;

  void validate() const {
    if (!(learning_rate > 0.0)) throw GenError("learning_rate must be > 0");
    if (epochs < 0 || batch_size < 1) throw GenError("invalid epochs/batch_size");
    arch.validate();
  }
};

struct DecodeConfig {
  int beam_width = 10;
  double temperature = 1.0;      // logits are divided by this; 0 = hard argmax
  double repetition_penalty = 1.0;  // 1 is the identity
  int max_len = 200;

  void validate() const {
    if (beam_width < 1) throw GenError("beam_width must be >= 1");
    if (temperature < 0.0) throw GenError("temperature must be >= 0");
    if (repetition_penalty < 1.0) throw GenError("repetition_penalty must be >= 1");
    if (max_len < 1) throw GenError("max_len must be >= 1");
  }
};

// All trainable tensors. visit() fixes the canonical order used by the
// optimizer, checkpointing and the finite-difference harness.
struct GenParams {
  Mat emb, pos;
  struct Layer {
    Mat ln1_g, ln1_b;
    Mat wq, wk, wv, wo;
    Mat ln2_g, ln2_b;
    Mat w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
  Mat lnf_g, lnf_b;
  Mat out_w, out_b;

  GenParams() = default;
  GenParams(const GenArch& arch, int vocab_size) {
    emb = Mat(vocab_size, arch.dim);
    pos = Mat(arch.max_positions, arch.dim);
    layers.resize(static_cast<std::size_t>(arch.layers));
    for (auto& l : layers) {
      l.ln1_g = Mat(1, arch.dim);
      l.ln1_b = Mat(1, arch.dim);
      l.wq = Mat(arch.dim, arch.dim);
      l.wk = Mat(arch.dim, arch.dim);
      l.wv = Mat(arch.dim, arch.dim);
      l.wo = Mat(arch.dim, arch.dim);
      l.ln2_g = Mat(1, arch.dim);
      l.ln2_b = Mat(1, arch.dim);
      l.w1 = Mat(arch.dim, arch.ff);
      l.b1 = Mat(1, arch.ff);
      l.w2 = Mat(arch.ff, arch.dim);
      l.b2 = Mat(1, arch.dim);
    }
    lnf_g = Mat(1, arch.dim);
    lnf_b = Mat(1, arch.dim);
    out_w = Mat(arch.dim, vocab_size);
    out_b = Mat(1, vocab_size);
  }

  template <class F>
  void visit(F&& f) {
    f("emb", emb);
    f("pos", pos);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      auto& l = layers[i];
      f(p + "ln1_g", l.ln1_g);
      f(p + "ln1_b", l.ln1_b);
      f(p + "wq", l.wq);
      f(p + "wk", l.wk);
      f(p + "wv", l.wv);
      f(p + "wo", l.wo);
      f(p + "ln2_g", l.ln2_g);
      f(p + "ln2_b", l.ln2_b);
      f(p + "w1", l.w1);
      f(p + "b1", l.b1);
      f(p + "w2", l.w2);
      f(p + "b2", l.b2);
    }
    f("lnf_g", lnf_g);
    f("lnf_b", lnf_b);
    f("out_w", out_w);
    f("out_b", out_b);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<GenParams*>(this)->visit(
        [&](const std::string& name, Mat& m) { f(name, static_cast<const Mat&>(m)); });
  }

  std::vector<nn::ParamRef> refs() {
    std::vector<nn::ParamRef> out;
    visit([&](const std::string& name, Mat& m) { out.push_back({name, &m}); });
    return out;
  }

  void init(Rng& rng) {
    visit([&](const std::string& name, Mat& m) {
      if (name.ends_with("ln1_g") || name.ends_with("ln2_g") || name == "lnf_g") {
        std::fill(m.data.begin(), m.data.end(), 1.0);
      } else if (name.ends_with("_b") || name.ends_with(".b1") || name.ends_with(".b2") ||
                 name == "out_b") {
        m.zero();
      } else if (name == "out_w") {
        m.fill_gaussian(rng, 0.01);  // keeps initial logits near zero
      } else {
        m.fill_gaussian(rng, 0.08);
      }
    });
  }

  void zero_all() {
    visit([](const std::string&, Mat& m) { m.zero(); });
  }
};

struct GeneratorModel {
  GenVocab vocab;
  GenArch arch;
  GenParams params;
  std::vector<double> train_loss;  // per-epoch mean token cross entropy
  std::vector<double> val_loss;
  int trained_epochs = 0;
};

namespace detail {

inline constexpr double kLnEps = 1e-5;

struct LnCache {
  std::vector<double> mean, rstd;
  Mat normed;  // post-normalization, pre-gain
};

inline void layernorm_forward(const Mat& x, const Mat& gain, const Mat& bias, Mat& y,
                              LnCache& cache) {
  const int d = x.cols;
  cache.mean.assign(static_cast<std::size_t>(x.rows), 0.0);
  cache.rstd.assign(static_cast<std::size_t>(x.rows), 0.0);
  cache.normed = Mat(x.rows, d);
  for (int t = 0; t < x.rows; ++t) {
    auto xr = x.row(t);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    cache.mean[static_cast<std::size_t>(t)] = mu;
    cache.rstd[static_cast<std::size_t>(t)] = rstd;
    for (int c = 0; c < d; ++c) {
      const double n = (xr[static_cast<std::size_t>(c)] - mu) * rstd;
      cache.normed.at(t, c) = n;
      y.at(t, c) = gain.data[static_cast<std::size_t>(c)] * n +
                   bias.data[static_cast<std::size_t>(c)];
    }
  }
}

inline void layernorm_backward(const Mat& dy, const Mat& gain, const LnCache& cache, Mat& dx_acc,
                               Mat& dgain, Mat& dbias) {
  const int d = dy.cols;
  std::vector<double> dn(static_cast<std::size_t>(d));
  for (int t = 0; t < dy.rows; ++t) {
    double dn_mean = 0.0, dnn_mean = 0.0;
    for (int c = 0; c < d; ++c) {
      const double g = dy.at(t, c);
      const double n = cache.normed.at(t, c);
      dgain.data[static_cast<std::size_t>(c)] += g * n;
      dbias.data[static_cast<std::size_t>(c)] += g;
      const double v = g * gain.data[static_cast<std::size_t>(c)];
      dn[static_cast<std::size_t>(c)] = v;
      dn_mean += v;
      dnn_mean += v * n;
    }
    dn_mean /= d;
    dnn_mean /= d;
    const double rstd = cache.rstd[static_cast<std::size_t>(t)];
    for (int c = 0; c < d; ++c) {
      const double n = cache.normed.at(t, c);
      dx_acc.at(t, c) += rstd * (dn[static_cast<std::size_t>(c)] - dn_mean - n * dnn_mean);
    }
  }
}

// y (L×out) = x (L×in) * w (in×out) + b
inline void linear_forward(const Mat& x, const Mat& w, const Mat& b, Mat& y) {
  for (int t = 0; t < x.rows; ++t) {
    auto yr = y.row(t);
    for (int c = 0; c < w.cols; ++c) yr[static_cast<std::size_t>(c)] =
        b.data.empty() ? 0.0 : b.data[static_cast<std::size_t>(c)];
    for (int k = 0; k < w.rows; ++k)
      nn::axpy(x.at(t, k), w.row(k), yr);
  }
}

inline void linear_backward(const Mat& x, const Mat& w, const Mat& dy, Mat& dx_acc, Mat& dw,
                            Mat* db) {
  for (int t = 0; t < x.rows; ++t) {
    auto dyr = dy.row(t);
    if (db)
      for (int c = 0; c < dy.cols; ++c) db->data[static_cast<std::size_t>(c)] +=
          dyr[static_cast<std::size_t>(c)];
    for (int k = 0; k < w.rows; ++k) {
      nn::axpy(x.at(t, k), dyr, dw.row(k));
      dx_acc.at(t, k) += nn::dot(w.row(k), dyr);
    }
  }
}

struct LayerCache {
  Mat input;       // X
  LnCache ln1;
  Mat n1;          // LN1 output
  Mat q, k, v;     // L×d
  std::vector<Mat> probs;  // per head, L×L lower-triangular attention
  Mat z;           // concatenated head outputs
  Mat attn_out;
  Mat a;           // residual after attention
  LnCache ln2;
  Mat n2;
  Mat h1;          // tanh activations, L×ff
  Mat mlp_out;
};

struct ForwardCache {
  std::vector<int> ids;
  Mat x0;
  std::vector<LayerCache> layers;
  LnCache lnf;
  Mat hf;  // final normalized hidden states
};

// Full forward pass over a token sequence; caches everything needed for
// the exact backward pass.
inline void forward_hidden(const GenParams& p, const GenArch& arch, const std::vector<int>& ids,
                           ForwardCache& fc) {
  const int L = static_cast<int>(ids.size());
  const int d = arch.dim;
  if (L > arch.max_positions) throw GenError("sequence exceeds max_positions");

  fc.ids = ids;
  fc.x0 = Mat(L, d);
  for (int t = 0; t < L; ++t)
    for (int c = 0; c < d; ++c)
      fc.x0.at(t, c) = p.emb.at(ids[static_cast<std::size_t>(t)], c) + p.pos.at(t, c);

  fc.layers.assign(p.layers.size(), {});
  const int heads = arch.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat* x = &fc.x0;
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& lp = p.layers[li];
    auto& lc = fc.layers[li];
    lc.input = *x;

    lc.n1 = Mat(L, d);
    layernorm_forward(lc.input, lp.ln1_g, lp.ln1_b, lc.n1, lc.ln1);

    lc.q = Mat(L, d);
    lc.k = Mat(L, d);
    lc.v = Mat(L, d);
    linear_forward(lc.n1, lp.wq, Mat(), lc.q);
    linear_forward(lc.n1, lp.wk, Mat(), lc.k);
    linear_forward(lc.n1, lp.wv, Mat(), lc.v);

    lc.z = Mat(L, d);
    lc.probs.assign(static_cast<std::size_t>(heads), Mat(L, L));
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      Mat& probs = lc.probs[static_cast<std::size_t>(h)];
      std::vector<double> row;
      for (int t = 0; t < L; ++t) {
        row.assign(static_cast<std::size_t>(t) + 1, 0.0);
        for (int u = 0; u <= t; ++u) {
          double s = 0.0;
          for (int c = 0; c < dh; ++c) s += lc.q.at(t, off + c) * lc.k.at(u, off + c);
          row[static_cast<std::size_t>(u)] = s * scale;
        }
        nn::softmax(row);
        for (int u = 0; u <= t; ++u) {
          probs.at(t, u) = row[static_cast<std::size_t>(u)];
          for (int c = 0; c < dh; ++c)
            lc.z.at(t, off + c) += row[static_cast<std::size_t>(u)] * lc.v.at(u, off + c);
        }
      }
    }

    lc.attn_out = Mat(L, d);
    linear_forward(lc.z, lp.wo, Mat(), lc.attn_out);

    lc.a = Mat(L, d);
    for (std::size_t i = 0; i < lc.a.size(); ++i)
      lc.a.data[i] = lc.input.data[i] + lc.attn_out.data[i];

    lc.n2 = Mat(L, d);
    layernorm_forward(lc.a, lp.ln2_g, lp.ln2_b, lc.n2, lc.ln2);

    lc.h1 = Mat(L, arch.ff);
    linear_forward(lc.n2, lp.w1, lp.b1, lc.h1);
    for (double& vv : lc.h1.data) vv = std::tanh(vv);

    lc.mlp_out = Mat(L, d);
    linear_forward(lc.h1, lp.w2, lp.b2, lc.mlp_out);

    // next layer input lives in lc.a + mlp; reuse lc.mlp_out as sum
    for (std::size_t i = 0; i < lc.mlp_out.size(); ++i) lc.mlp_out.data[i] += lc.a.data[i];
    x = &lc.mlp_out;
  }

  fc.hf = Mat(L, d);
  layernorm_forward(*x, p.lnf_g, p.lnf_b, fc.hf, fc.lnf);
}

inline void logits_at(const GenParams& p, const ForwardCache& fc, int t,
                      std::vector<double>& logits) {
  logits.assign(static_cast<std::size_t>(p.out_w.cols), 0.0);
  for (int c = 0; c < p.out_w.cols; ++c) logits[static_cast<std::size_t>(c)] =
      p.out_b.data[static_cast<std::size_t>(c)];
  for (int k = 0; k < p.out_w.rows; ++k)
    nn::axpy(fc.hf.at(t, k), p.out_w.row(k), logits);
}

// Cross-entropy over the masked positions [first_pred, L-1) predicting the
// next token. If grads != nullptr, accumulates exact gradients of
// scale * sum(CE over masked positions).
inline double masked_ce(const GenParams& p, const GenArch& arch, const std::vector<int>& ids,
                        int first_pred, double scale, GenParams* grads, int* n_targets) {
  ForwardCache fc;
  forward_hidden(p, arch, ids, fc);
  const int L = static_cast<int>(ids.size());
  const int d = arch.dim;
  const int V = p.out_w.cols;

  double ce_sum = 0.0;
  int count = 0;
  Mat dhf;
  if (grads) dhf = Mat(L, d);

  std::vector<double> logits, probs;
  for (int t = first_pred; t < L - 1; ++t) {
    logits_at(p, fc, t, logits);
    probs = logits;
    nn::softmax(probs);
    const int target = ids[static_cast<std::size_t>(t) + 1];
    const double pt = std::max(probs[static_cast<std::size_t>(target)], 1e-300);
    ce_sum += -std::log(pt);
    ++count;
    if (grads) {
      // dlogits = scale * (softmax - onehot)
      for (int c = 0; c < V; ++c) {
        const double dl =
            scale * (probs[static_cast<std::size_t>(c)] - (c == target ? 1.0 : 0.0));
        grads->out_b.data[static_cast<std::size_t>(c)] += dl;
        for (int k = 0; k < d; ++k) {
          grads->out_w.at(k, c) += fc.hf.at(t, k) * dl;
          dhf.at(t, k) += p.out_w.at(k, c) * dl;
        }
      }
    }
  }
  if (n_targets) *n_targets = count;
  if (!grads) return ce_sum;

  // Backward through the final layernorm.
  const Mat* x_last = fc.layers.empty() ? &fc.x0 : &fc.layers.back().mlp_out;
  Mat dx(L, d);
  layernorm_backward(dhf, p.lnf_g, fc.lnf, dx, grads->lnf_g, grads->lnf_b);
  (void)x_last;

  const int heads = arch.heads;
  const int dh = d / heads;
  const double scale_attn = 1.0 / std::sqrt(static_cast<double>(dh));

  for (int li = static_cast<int>(p.layers.size()) - 1; li >= 0; --li) {
    const auto& lp = p.layers[static_cast<std::size_t>(li)];
    auto& lc = fc.layers[static_cast<std::size_t>(li)];
    auto& gl = grads->layers[static_cast<std::size_t>(li)];

    // dx is the gradient w.r.t. this layer's output (a + mlp_out).
    Mat da = dx;  // residual branch
    Mat dh1(L, arch.ff);
    // mlp_out = h1 * w2 + b2
    linear_backward(lc.h1, lp.w2, dx, dh1, gl.w2, &gl.b2);
    // tanh backward
    for (std::size_t i = 0; i < dh1.size(); ++i)
      dh1.data[i] *= 1.0 - lc.h1.data[i] * lc.h1.data[i];
    Mat dn2(L, d);
    linear_backward(lc.n2, lp.w1, dh1, dn2, gl.w1, &gl.b1);
    layernorm_backward(dn2, lp.ln2_g, lc.ln2, da, gl.ln2_g, gl.ln2_b);

    // da is now the gradient w.r.t. a = input + attn_out.
    Mat dx_prev = da;  // residual to layer input
    Mat dz(L, d);
    linear_backward(lc.z, lp.wo, da, dz, gl.wo, nullptr);

    Mat dq(L, d), dk(L, d), dv(L, d);
    std::vector<double> dprob, dscore;
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      const Mat& probs = lc.probs[static_cast<std::size_t>(h)];
      for (int t = 0; t < L; ++t) {
        dprob.assign(static_cast<std::size_t>(t) + 1, 0.0);
        for (int u = 0; u <= t; ++u) {
          double s = 0.0;
          for (int c = 0; c < dh; ++c) {
            s += dz.at(t, off + c) * lc.v.at(u, off + c);
            dv.at(u, off + c) += probs.at(t, u) * dz.at(t, off + c);
          }
          dprob[static_cast<std::size_t>(u)] = s;
        }
        double inner = 0.0;
        for (int u = 0; u <= t; ++u) inner += probs.at(t, u) * dprob[static_cast<std::size_t>(u)];
        dscore.assign(static_cast<std::size_t>(t) + 1, 0.0);
        for (int u = 0; u <= t; ++u)
          dscore[static_cast<std::size_t>(u)] =
              probs.at(t, u) * (dprob[static_cast<std::size_t>(u)] - inner);
        for (int u = 0; u <= t; ++u) {
          const double ds = dscore[static_cast<std::size_t>(u)] * scale_attn;
          for (int c = 0; c < dh; ++c) {
            dq.at(t, off + c) += ds * lc.k.at(u, off + c);
            dk.at(u, off + c) += ds * lc.q.at(t, off + c);
          }
        }
      }
    }

    Mat dn1(L, d);
    linear_backward(lc.n1, lp.wq, dq, dn1, gl.wq, nullptr);
    linear_backward(lc.n1, lp.wk, dk, dn1, gl.wk, nullptr);
    linear_backward(lc.n1, lp.wv, dv, dn1, gl.wv, nullptr);
    layernorm_backward(dn1, lp.ln1_g, lc.ln1, dx_prev, gl.ln1_g, gl.ln1_b);

    dx = std::move(dx_prev);
  }

  for (int t = 0; t < L; ++t)
    for (int c = 0; c < d; ++c) {
      grads->emb.at(ids[static_cast<std::size_t>(t)], c) += dx.at(t, c);
      grads->pos.at(t, c) += dx.at(t, c);
    }
  return ce_sum;
}

// [<bos>] + source + [<sep>] + target + [<eos>]; predictions are scored
// from the separator position onward.
inline std::vector<int> encode_pair(const GenVocab& vocab, const TextPair& pair, int* sep_pos) {
  std::vector<int> ids;
  ids.push_back(GenVocab::kBos);
  for (const auto& tok : textsim::tokenize(pair.source)) ids.push_back(vocab.lookup(tok));
  *sep_pos = static_cast<int>(ids.size());
  ids.push_back(GenVocab::kSep);
  for (const auto& tok : textsim::tokenize(pair.target)) ids.push_back(vocab.lookup(tok));
  ids.push_back(GenVocab::kEos);
  return ids;
}

}  // namespace detail

// Per-token cross entropy of the target side, averaged over the given
// pairs. Gradients are accumulated into `grads` when non-null, scaled so
// the result is the gradient of the mean.
inline double mean_target_ce(const GeneratorModel& m, const std::vector<TextPair>& pairs,
                             GenParams* grads = nullptr) {
  if (pairs.empty()) throw GenError("empty evaluation set");
  std::vector<std::vector<int>> seqs;
  std::vector<int> sep_positions;
  long total_targets = 0;
  for (const auto& pr : pairs) {
    int sep = 0;
    seqs.push_back(detail::encode_pair(m.vocab, pr, &sep));
    sep_positions.push_back(sep);
    total_targets += static_cast<long>(seqs.back().size()) - sep - 1;
  }
  if (total_targets == 0) throw GenError("no target tokens in evaluation set");
  const double scale = 1.0 / static_cast<double>(total_targets);
  double ce = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i)
    ce += detail::masked_ce(m.params, m.arch, seqs[i], sep_positions[i],
                            grads ? scale : 0.0, grads, nullptr);
  return ce * scale;
}

// Trains the conditional model with teacher forcing: token-wise cross
// entropy of target tokens given the source prefix, loss masked over
// source positions. Deterministic per seed.
inline GeneratorModel fit_generator(const std::vector<TextPair>& pairs,
                                    const GenTrainConfig& cfg,
                                    const std::vector<TextPair>* validation = nullptr) {
  cfg.validate();
  if (pairs.empty()) throw GenError("fit_generator: empty pair set");

  GeneratorModel m;
  m.arch = cfg.arch;
  m.vocab = build_gen_vocab(pairs, cfg.vocab_min_count);

  Rng rng(derive_seed(cfg.seed, "gen_init"));
  m.params = GenParams(m.arch, m.vocab.size());
  m.params.init(rng);

  std::vector<std::vector<int>> seqs;
  std::vector<int> sep_positions;
  for (const auto& pr : pairs) {
    int sep = 0;
    seqs.push_back(detail::encode_pair(m.vocab, pr, &sep));
    sep_positions.push_back(sep);
  }

  nn::Optimizer opt(nn::OptimizerKind::adam, cfg.learning_rate);
  GenParams grads(m.arch, m.vocab.size());
  auto param_refs = m.params.refs();
  auto grad_refs = grads.refs();

  std::vector<std::size_t> order(seqs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  Rng shuffle_rng(derive_seed(cfg.seed, "gen_batches"));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_ce = 0.0;
    long epoch_targets = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      long batch_targets = 0;
      for (std::size_t i = start; i < end; ++i)
        batch_targets += static_cast<long>(seqs[order[i]].size()) - sep_positions[order[i]] - 1;
      if (batch_targets == 0) continue;
      const double scale = 1.0 / static_cast<double>(batch_targets);
      grads.zero_all();
      for (std::size_t i = start; i < end; ++i)
        epoch_ce += detail::masked_ce(m.params, m.arch, seqs[order[i]],
                                      sep_positions[order[i]], scale, &grads, nullptr);
      epoch_targets += batch_targets;
      opt.step(param_refs, grad_refs);
    }
    const double train = epoch_targets ? epoch_ce / static_cast<double>(epoch_targets) : 0.0;
    if (!std::isfinite(train))
      throw GenError("fit_generator: non-finite training loss at epoch " +
                     std::to_string(epoch));
    m.train_loss.push_back(train);
    if (validation && !validation->empty()) m.val_loss.push_back(mean_target_ce(m, *validation));
    ++m.trained_epochs;
  }
  return m;
}

// exp(mean token-wise cross entropy over target tokens); always >= ~1.
inline double perplexity(const GeneratorModel& m, const std::vector<TextPair>& pairs) {
  return std::exp(mean_target_ce(m, pairs));
}

namespace detail {

// Incrementally extended per-position key/value cache; beam hypotheses
// copy it on branching.
struct StepState {
  // [layer][position][dim]
  std::vector<std::vector<std::vector<double>>> keys;
  std::vector<std::vector<std::vector<double>>> vals;
  int length = 0;
};

// Feeds one token at the next position and returns the logits for the
// following token. Equivalent to forward_hidden on the full prefix.
inline std::vector<double> advance(const GenParams& p, const GenArch& arch, StepState& st,
                                   int token) {
  const int d = arch.dim;
  const int heads = arch.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int t = st.length;
  if (t >= arch.max_positions) throw GenError("decode exceeded max_positions");
  if (st.keys.empty()) {
    st.keys.resize(p.layers.size());
    st.vals.resize(p.layers.size());
  }

  std::vector<double> x(static_cast<std::size_t>(d));
  for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] = p.emb.at(token, c) + p.pos.at(t, c);

  auto layernorm_row = [&](const std::vector<double>& in, const Mat& g, const Mat& b,
                           std::vector<double>& out) {
    double mu = 0.0;
    for (double v : in) mu += v;
    mu /= d;
    double var = 0.0;
    for (double v : in) var += (v - mu) * (v - mu);
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    out.resize(static_cast<std::size_t>(d));
    for (int c = 0; c < d; ++c)
      out[static_cast<std::size_t>(c)] =
          g.data[static_cast<std::size_t>(c)] * (in[static_cast<std::size_t>(c)] - mu) * rstd +
          b.data[static_cast<std::size_t>(c)];
  };

  std::vector<double> n1, q(static_cast<std::size_t>(d)), k(static_cast<std::size_t>(d)),
      v(static_cast<std::size_t>(d)), z(static_cast<std::size_t>(d)), attn(static_cast<std::size_t>(d)),
      n2, h1(static_cast<std::size_t>(arch.ff)), mlp(static_cast<std::size_t>(d));
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& lp = p.layers[li];
    layernorm_row(x, lp.ln1_g, lp.ln1_b, n1);
    nn::matvec_t(lp.wq, n1, q);
    nn::matvec_t(lp.wk, n1, k);
    nn::matvec_t(lp.wv, n1, v);
    st.keys[li].push_back(k);
    st.vals[li].push_back(v);

    std::fill(z.begin(), z.end(), 0.0);
    std::vector<double> scores(static_cast<std::size_t>(t) + 1);
    for (int h = 0; h < heads; ++h) {
      const int off = h * dh;
      for (int u = 0; u <= t; ++u) {
        double s = 0.0;
        const auto& ku = st.keys[li][static_cast<std::size_t>(u)];
        for (int c = 0; c < dh; ++c)
          s += q[static_cast<std::size_t>(off + c)] * ku[static_cast<std::size_t>(off + c)];
        scores[static_cast<std::size_t>(u)] = s * scale;
      }
      nn::softmax(scores);
      for (int u = 0; u <= t; ++u) {
        const auto& vu = st.vals[li][static_cast<std::size_t>(u)];
        for (int c = 0; c < dh; ++c)
          z[static_cast<std::size_t>(off + c)] +=
              scores[static_cast<std::size_t>(u)] * vu[static_cast<std::size_t>(off + c)];
      }
    }
    nn::matvec_t(lp.wo, z, attn);
    for (int c = 0; c < d; ++c) x[static_cast<std::size_t>(c)] += attn[static_cast<std::size_t>(c)];

    layernorm_row(x, lp.ln2_g, lp.ln2_b, n2);
    nn::matvec_t(lp.w1, n2, h1);
    for (int c = 0; c < arch.ff; ++c)
      h1[static_cast<std::size_t>(c)] =
          std::tanh(h1[static_cast<std::size_t>(c)] + lp.b1.data[static_cast<std::size_t>(c)]);
    nn::matvec_t(lp.w2, h1, mlp);
    for (int c = 0; c < d; ++c)
      x[static_cast<std::size_t>(c)] += mlp[static_cast<std::size_t>(c)] +
                                        lp.b2.data[static_cast<std::size_t>(c)];
  }

  std::vector<double> hf;
  layernorm_row(x, p.lnf_g, p.lnf_b, hf);
  std::vector<double> logits(static_cast<std::size_t>(p.out_w.cols));
  nn::matvec_t(p.out_w, hf, logits);
  for (int c = 0; c < p.out_w.cols; ++c)
    logits[static_cast<std::size_t>(c)] += p.out_b.data[static_cast<std::size_t>(c)];
  ++st.length;
  return logits;
}

}  // namespace detail

// Beam search over target continuations of a source text. Hypothesis
// scores are sums of token log-probabilities after dividing logits by the
// temperature and applying the repetition penalty (positive logits of
// already-emitted tokens divided by it, negative ones multiplied).
// Completed hypotheses are compared on length-normalized score; all ties
// break deterministically (token index, then emission order).
// temperature == 0 degenerates to hard argmax scoring.
inline std::string generate(const GeneratorModel& m, const std::string& source,
                            const DecodeConfig& cfg) {
  cfg.validate();

  detail::StepState state;
  std::vector<double> logits;
  {
    std::vector<int> prefix;
    prefix.push_back(GenVocab::kBos);
    for (const auto& tok : textsim::tokenize(source)) prefix.push_back(m.vocab.lookup(tok));
    prefix.push_back(GenVocab::kSep);
    for (int id : prefix) logits = detail::advance(m.params, m.arch, state, id);
  }

  struct Beam {
    detail::StepState state;
    std::vector<int> emitted;
    double score_sum = 0.0;
    std::vector<double> logits;
  };
  struct Hypothesis {
    std::vector<int> emitted;
    double normalized = 0.0;
  };

  std::vector<Beam> beams;
  beams.push_back({std::move(state), {}, 0.0, std::move(logits)});
  std::vector<Hypothesis> completed;

  const int V = m.vocab.size();
  std::vector<double> adjusted(static_cast<std::size_t>(V));

  for (int step = 0; step < cfg.max_len && !beams.empty() &&
                     static_cast<int>(completed.size()) < cfg.beam_width;
       ++step) {
    struct Cand {
      double score;
      int parent;
      int token;
      double lp;
    };
    std::vector<Cand> cands;
    for (int bi = 0; bi < static_cast<int>(beams.size()); ++bi) {
      Beam& b = beams[static_cast<std::size_t>(bi)];
      adjusted = b.logits;
      if (cfg.repetition_penalty != 1.0) {
        std::unordered_set<int> emitted(b.emitted.begin(), b.emitted.end());
        for (int tok : emitted) {
          double& l = adjusted[static_cast<std::size_t>(tok)];
          l = l > 0.0 ? l / cfg.repetition_penalty : l * cfg.repetition_penalty;
        }
      }
      if (cfg.temperature == 0.0) {
        int best = 0;
        for (int tok = 1; tok < V; ++tok)
          if (adjusted[static_cast<std::size_t>(tok)] > adjusted[static_cast<std::size_t>(best)])
            best = tok;
        cands.push_back({b.score_sum, bi, best, 0.0});
        continue;
      }
      for (double& l : adjusted) l /= cfg.temperature;
      // log-softmax
      double mx = adjusted[0];
      for (double l : adjusted) mx = std::max(mx, l);
      double lse = 0.0;
      for (double l : adjusted) lse += std::exp(l - mx);
      lse = mx + std::log(lse);

      // top-beam_width tokens of this beam (ties: lower token index)
      std::vector<int> idx(static_cast<std::size_t>(V));
      for (int tok = 0; tok < V; ++tok) idx[static_cast<std::size_t>(tok)] = tok;
      const auto take = static_cast<std::size_t>(std::min(cfg.beam_width, V));
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                        [&](int a, int c) {
                          const double la = adjusted[static_cast<std::size_t>(a)];
                          const double lc = adjusted[static_cast<std::size_t>(c)];
                          return la != lc ? la > lc : a < c;
                        });
      for (std::size_t k = 0; k < take; ++k) {
        const int tok = idx[k];
        const double lp = adjusted[static_cast<std::size_t>(tok)] - lse;
        cands.push_back({b.score_sum + lp, bi, tok, lp});
      }
    }

    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.parent != b.parent) return a.parent < b.parent;
      return a.token < b.token;
    });
    if (cands.size() > static_cast<std::size_t>(cfg.beam_width))
      cands.resize(static_cast<std::size_t>(cfg.beam_width));

    std::vector<Beam> next;
    for (const Cand& c : cands) {
      const Beam& parent = beams[static_cast<std::size_t>(c.parent)];
      if (c.token == GenVocab::kEos) {
        const double n = static_cast<double>(parent.emitted.size()) + 1.0;
        completed.push_back({parent.emitted, c.score / n});
        continue;
      }
      Beam nb;
      nb.state = parent.state;
      nb.emitted = parent.emitted;
      nb.emitted.push_back(c.token);
      nb.score_sum = c.score;
      nb.logits = detail::advance(m.params, m.arch, nb.state, c.token);
      next.push_back(std::move(nb));
    }
    beams = std::move(next);
  }

  // Hypotheses alive at the step limit count as completed, normalized by
  // their emitted length.
  for (const Beam& b : beams) {
    const double n = std::max<double>(1.0, static_cast<double>(b.emitted.size()));
    completed.push_back({b.emitted, b.score_sum / n});
  }
  if (completed.empty()) return "";

  const Hypothesis* best = &completed[0];
  for (const auto& h : completed) {
    if (h.normalized > best->normalized ||
        (h.normalized == best->normalized &&
         (h.emitted.size() < best->emitted.size() ||
          (h.emitted.size() == best->emitted.size() && h.emitted < best->emitted))))
      best = &h;
  }

  textsim::TokenSequence words;
  words.reserve(best->emitted.size());
  for (int id : best->emitted) words.push_back(m.vocab.word(id));
  return textsim::join_tokens(words);
}

// ---------------------------------------------------------------------------
// Augmented dataset assembly
// ---------------------------------------------------------------------------

enum class Provenance { original, gda, eda, wordnet, imported };

inline std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::gda: return "gda";
    case Provenance::eda: return "eda";
    case Provenance::wordnet: return "wordnet";
    case Provenance::imported: return "imported";
  }
  throw GenError("invalid provenance");
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "original") return Provenance::original;
  if (s == "gda") return Provenance::gda;
  if (s == "eda") return Provenance::eda;
  if (s == "wordnet") return Provenance::wordnet;
  if (s == "imported") return Provenance::imported;
  throw GenError("unknown provenance tag: " + s);
}

struct WeightedExample {
  corpus::Example example;
  double weight = 1.0;
  Provenance provenance = Provenance::original;
};

struct AugmentedDataset {
  std::vector<WeightedExample> examples;
  corpus::LabelVocabulary vocabulary;

  std::size_t size() const { return examples.size(); }
};

// Originals enter with weight 1; each generated text becomes a new example
// inheriting its source's label set with weight lambda_gen.
inline AugmentedDataset build_augmented_dataset(
    const corpus::Dataset& d, const std::vector<std::pair<std::string, std::string>>& generated,
    double lambda_gen = 0.5, Provenance provenance = Provenance::gda) {
  if (!(lambda_gen > 0.0)) throw GenError("lambda_gen must be > 0");

  AugmentedDataset out;
  out.vocabulary = d.vocabulary;
  std::unordered_map<std::string, std::size_t> by_id;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < d.size(); ++i) {
    by_id.emplace(d.examples[i].id, i);
    ids.insert(d.examples[i].id);
    out.examples.push_back({d.examples[i], 1.0, Provenance::original});
  }

  const std::string suffix = "#" + provenance_name(provenance);
  std::unordered_map<std::string, int> per_source;
  for (const auto& [source_id, text] : generated) {
    auto it = by_id.find(source_id);
    if (it == by_id.end())
      throw GenError("generated record references unknown source id '" + source_id + "'");
    const corpus::Example& src = d.examples[it->second];
    corpus::Example e;
    e.id = source_id + suffix + std::to_string(per_source[source_id]++);
    e.labels = src.labels;
    corpus::split_input_fields(textsim::tokenize(text), &e.title, &e.description);
    if (!ids.insert(e.id).second) throw GenError("duplicate derived id '" + e.id + "'");
    out.examples.push_back({std::move(e), lambda_gen, provenance});
  }
  return out;
}

// Same bookkeeping for pre-built synthetic examples (rule-based paths).
inline AugmentedDataset build_augmented_dataset_from_examples(
    const corpus::Dataset& d, const std::vector<corpus::Example>& synthetic, double lambda,
    Provenance provenance) {
  if (!(lambda > 0.0)) throw GenError("lambda must be > 0");
  AugmentedDataset out;
  out.vocabulary = d.vocabulary;
  std::unordered_set<std::string> ids;
  for (const auto& e : d.examples) {
    ids.insert(e.id);
    out.examples.push_back({e, 1.0, Provenance::original});
  }
  for (const auto& e : synthetic) {
    if (!ids.insert(e.id).second) throw GenError("duplicate derived id '" + e.id + "'");
    out.examples.push_back({e, lambda, provenance});
  }
  return out;
}

// Line-delimited records "source_id<TAB>text". Records are validated
// against the corpus ids and the word-length bound.
inline std::vector<std::pair<std::string, std::string>> import_generated(
    const std::string& path, const corpus::Dataset& d, int max_words = 200) {
  std::unordered_set<std::string> ids;
  for (const auto& e : d.examples) ids.insert(e.id);

  std::ifstream in(path);
  if (!in) throw GenError("cannot open generated-text file: " + path);
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw GenError(path + ":" + std::to_string(lineno) + ": malformed line");
    std::string id = line.substr(0, tab);
    std::string text = line.substr(tab + 1);
    if (!ids.count(id))
      throw GenError(path + ":" + std::to_string(lineno) + ": unknown source id '" + id + "'");
    if (static_cast<int>(textsim::tokenize(text).size()) > max_words)
      throw GenError(path + ":" + std::to_string(lineno) + ": text exceeds " +
                     std::to_string(max_words) + " words");
    out.emplace_back(std::move(id), std::move(text));
  }
  return out;
}

inline void save_generated(const std::vector<std::pair<std::string, std::string>>& generated,
                           const std::string& path) {
  std::ostringstream out;
  for (const auto& [id, text] : generated) out << id << '\t' << text << '\n';
  write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Augmented-dataset persistence (dataset schema + weight and provenance)
// ---------------------------------------------------------------------------

inline void save_augmented(const AugmentedDataset& a, const std::string& path) {
  std::ostringstream out;
  for (const auto& we : a.examples) {
    nlohmann::ordered_json rec;
    rec["id"] = we.example.id;
    rec["title"] = we.example.title;
    rec["description"] = we.example.description;
    auto labels = nlohmann::ordered_json::array();
    for (int l : we.example.labels) labels.push_back(a.vocabulary.name(l));
    rec["labels"] = std::move(labels);
    rec["weight"] = we.weight;
    rec["provenance"] = provenance_name(we.provenance);
    out << rec.dump() << '\n';
  }
  write_file(path, out.str());
}

// Plain dataset records (no weight/provenance fields) load as originals
// with weight 1, so an unaugmented snapshot is a valid training input.
inline AugmentedDataset load_augmented(const std::string& path,
                                       const corpus::LabelVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw GenError("cannot open augmented dataset: " + path);
  AugmentedDataset a;
  a.vocabulary = vocab;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object())
      throw GenError(path + ":" + std::to_string(lineno) + ": malformed record");
    WeightedExample we;
    try {
      we.example.id = rec.at("id").get<std::string>();
      we.example.title = rec.at("title").get<std::string>();
      we.example.description = rec.at("description").get<std::string>();
      for (const auto& name : rec.at("labels")) {
        const int id = a.vocabulary.find(name.get<std::string>());
        if (id < 0)
          throw GenError(path + ":" + std::to_string(lineno) + ": label '" +
                         name.get<std::string>() + "' not in vocabulary");
        we.example.labels.push_back(id);
      }
      we.weight = rec.value("weight", 1.0);
      we.provenance = parse_provenance(rec.value("provenance", "original"));
    } catch (const nlohmann::json::exception& ex) {
      throw GenError(path + ":" + std::to_string(lineno) + ": malformed record (" + ex.what() +
                     ")");
    }
    std::sort(we.example.labels.begin(), we.example.labels.end());
    we.example.labels.erase(std::unique(we.example.labels.begin(), we.example.labels.end()),
                            we.example.labels.end());
    if (!(we.weight > 0.0))
      throw GenError(path + ":" + std::to_string(lineno) + ": weight must be > 0");
    if (!seen.insert(we.example.id).second)
      throw GenError(path + ":" + std::to_string(lineno) + ": duplicate id '" + we.example.id +
                     "'");
    a.examples.push_back(std::move(we));
  }
  return a;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline ckpt::Checkpoint to_checkpoint(const GeneratorModel& m) {
  ckpt::Checkpoint c;
  c.kind = "generator";
  c.meta["dim"] = m.arch.dim;
  c.meta["layers"] = m.arch.layers;
  c.meta["heads"] = m.arch.heads;
  c.meta["ff"] = m.arch.ff;
  c.meta["max_positions"] = m.arch.max_positions;
  c.meta["vocab"] = m.vocab.words();
  c.meta["trained_epochs"] = m.trained_epochs;
  c.meta["train_loss"] = m.train_loss;
  c.meta["val_loss"] = m.val_loss;
  m.params.visit(
      [&](const std::string& name, const Mat& mat) { c.tensors.emplace_back(name, mat); });
  return c;
}

inline GeneratorModel from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != "generator") throw GenError("checkpoint is not a generator model");
  GeneratorModel m;
  m.arch.dim = c.meta.at("dim").get<int>();
  m.arch.layers = c.meta.at("layers").get<int>();
  m.arch.heads = c.meta.at("heads").get<int>();
  m.arch.ff = c.meta.at("ff").get<int>();
  m.arch.max_positions = c.meta.at("max_positions").get<int>();
  const auto words = c.meta.at("vocab").get<std::vector<std::string>>();
  for (std::size_t i = 4; i < words.size(); ++i) m.vocab.add(words[i]);
  if (m.vocab.words() != words) throw GenError("checkpoint vocabulary is inconsistent");
  m.trained_epochs = c.meta.at("trained_epochs").get<int>();
  m.train_loss = c.meta.at("train_loss").get<std::vector<double>>();
  m.val_loss = c.meta.at("val_loss").get<std::vector<double>>();
  m.params = GenParams(m.arch, m.vocab.size());
  std::size_t i = 0;
  m.params.visit([&](const std::string& name, Mat& mat) {
    if (i >= c.tensors.size() || c.tensors[i].first != name)
      throw GenError("checkpoint tensor mismatch at '" + name + "'");
    const Mat& src = c.tensors[i].second;
    if (src.rows != mat.rows || src.cols != mat.cols)
      throw GenError("checkpoint tensor shape mismatch at '" + name + "'");
    mat = src;
    ++i;
  });
  if (i != c.tensors.size()) throw GenError("checkpoint has extra tensors");
  return m;
}

}  // namespace xmcaug::gen_aug
