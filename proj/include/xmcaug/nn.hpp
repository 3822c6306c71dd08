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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xmcaug/common.hpp"

// Minimal double-precision building blocks for the desk-scale models.
// Everything is row-major, single-threaded and deterministic.
namespace xmcaug::nn {

struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::span<double> row(int r) { return {data.data() + static_cast<std::size_t>(r) * cols,
                                          static_cast<std::size_t>(cols)}; }
  std::span<const double> row(int r) const {
    return {data.data() + static_cast<std::size_t>(r) * cols, static_cast<std::size_t>(cols)};
  }
  std::size_t size() const { return data.size(); }
  void zero() { std::fill(data.begin(), data.end(), 0.0); }

  void fill_gaussian(Rng& rng, double stddev) {
    for (double& v : data) v = rng.gaussian(0.0, stddev);
  }
};

// A named view of one parameter tensor; models expose their parameters as
// an ordered list of these so the optimizer, checkpointing and the
// finite-difference harness all walk the same structure.
struct ParamRef {
  std::string name;
  Mat* mat;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// y = x * W, with x of length W.rows and y of length W.cols.
inline void matvec_t(const Mat& w, std::span<const double> x, std::span<double> y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (int r = 0; r < w.rows; ++r) axpy(x[static_cast<std::size_t>(r)], w.row(r), y);
}

// In-place stable softmax.
inline void softmax(std::span<double> v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline bool all_finite(const Mat& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

enum class OptimizerKind { adam, sgd };

inline OptimizerKind parse_optimizer(const std::string& tag) {
  if (tag == "adam") return OptimizerKind::adam;
  if (tag == "sgd") return OptimizerKind::sgd;
  throw std::invalid_argument("unknown optimizer tag: " + tag);
}

// Adaptive-moment optimizer with optional plain-SGD mode. Slots are
// allocated lazily in parameter order, so updates are deterministic.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double weight_decay = 0.0)
      : kind_(kind), lr_(learning_rate), weight_decay_(weight_decay) {
    if (!(lr_ > 0.0)) throw std::invalid_argument("Optimizer: learning rate must be > 0");
  }

  void step(const std::vector<ParamRef>& params, const std::vector<ParamRef>& grads) {
    if (params.size() != grads.size())
      throw std::invalid_argument("Optimizer: parameter/gradient shape mismatch");
    if (slots_m_.empty() && kind_ == OptimizerKind::adam) {
      for (const auto& p : params) {
        slots_m_.emplace_back(p.mat->rows, p.mat->cols);
        slots_v_.emplace_back(p.mat->rows, p.mat->cols);
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Mat& w = *params[i].mat;
      const Mat& g = *grads[i].mat;
      if (w.size() != g.size())
        throw std::invalid_argument("Optimizer: gradient size mismatch for " + params[i].name);
      for (std::size_t k = 0; k < w.size(); ++k) {
        double gk = g.data[k] + weight_decay_ * w.data[k];
        if (kind_ == OptimizerKind::sgd) {
          w.data[k] -= lr_ * gk;
        } else {
          double& m = slots_m_[i].data[k];
          double& v = slots_v_[i].data[k];
          m = kBeta1 * m + (1.0 - kBeta1) * gk;
          v = kBeta2 * v + (1.0 - kBeta2) * gk * gk;
          w.data[k] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + kEps);
        }
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  OptimizerKind kind_;
  double lr_;
  double weight_decay_;
  long t_ = 0;
  std::vector<Mat> slots_m_, slots_v_;
};

}  // namespace xmcaug::nn
