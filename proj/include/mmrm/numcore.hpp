// Copyright 2026 The mmrm-lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Deterministic numerics shared by every other module: fixed-size vectors,
// seeded random streams, the two-layer reward network with its analytic
// pairwise gradient, a central-difference checker and AdamW.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mmrm {

// ---------------------------------------------------------------------------
// Dense carriers
// ---------------------------------------------------------------------------

/// Double-precision vector whose length is fixed at construction.
class Vec64 {
 public:
  Vec64() = default;
  explicit Vec64(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec64(std::initializer_list<double> values) : data_(values) {}
  explicit Vec64(std::vector<double> values) : data_(std::move(values)) {}

  std::size_t size() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  operator std::span<const double>() const { return data_; }  // NOLINT
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }
  const std::vector<double>& values() const { return data_; }

  friend bool operator==(const Vec64&, const Vec64&) = default;

 private:
  std::vector<double> data_;
};

/// Row-major double-precision matrix with fixed shape.
class Mat64 {
 public:
  Mat64() = default;
  Mat64(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }
  std::span<const double> flat() const { return data_; }
  double frobenius_norm() const;

  friend bool operator==(const Mat64&, const Mat64&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
bool all_finite(std::span<const double> a);
/// Byte-level equality; distinguishes -0.0 from 0.0.
bool bit_identical(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Seeds and random streams
// ---------------------------------------------------------------------------

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view bytes);
/// fnv1a64 as 16 lowercase hex digits.
std::string hex_digest(std::string_view bytes);

/// Child seed for a named component. Streams for different names are
/// independent, so adding a component never shifts an existing stream.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view component);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

// ---------------------------------------------------------------------------
// Reward network
// ---------------------------------------------------------------------------

struct RewardDims {
  std::size_t d_v = 16;
  std::size_t d_q = 8;
  std::size_t d_a = 16;
  std::size_t hidden = 32;

  std::size_t input_dim() const { return d_v + d_q + d_a; }
  friend bool operator==(const RewardDims&, const RewardDims&) = default;
};

/// r(v, q, a) = W2 . tanh(W1 [v;q;a] + b1) + b2.
///
/// Parameters live in one flat buffer laid out as [W1 | b1 | W2 | b2] with W1
/// row-major (hidden x input). Gradients use the same layout.
class RewardNet {
 public:
  RewardNet() = default;
  static RewardNet zeros(const RewardDims& dims);
  /// Weights uniform in +-1/sqrt(fan_in), biases zero.
  static RewardNet initialize(const RewardDims& dims, std::uint64_t seed);

  const RewardDims& dims() const { return dims_; }
  std::uint64_t seed() const { return seed_; }

  std::size_t num_params() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  double& w1(std::size_t h, std::size_t i) { return params_[h * dims_.input_dim() + i]; }
  double w1(std::size_t h, std::size_t i) const { return params_[h * dims_.input_dim() + i]; }
  double& b1(std::size_t h) { return params_[b1_offset() + h]; }
  double b1(std::size_t h) const { return params_[b1_offset() + h]; }
  double& w2(std::size_t h) { return params_[w2_offset() + h]; }
  double w2(std::size_t h) const { return params_[w2_offset() + h]; }
  double& b2() { return params_.back(); }
  double b2() const { return params_.back(); }

  std::size_t b1_offset() const { return dims_.hidden * dims_.input_dim(); }
  std::size_t w2_offset() const { return b1_offset() + dims_.hidden; }

  double forward(std::span<const double> v, std::span<const double> q,
                 std::span<const double> a) const;
  /// forward with the vision block replaced by zeros.
  double masked_forward(std::span<const double> v, std::span<const double> q,
                        std::span<const double> a) const;
  /// Score an already assembled [v;q;a] input; `hidden` receives tanh
  /// activations when non-empty.
  double score_input(std::span<const double> x, std::span<double> hidden = {}) const;

  friend bool operator==(const RewardNet&, const RewardNet&) = default;

 private:
  RewardNet(const RewardDims& dims, std::uint64_t seed);

  RewardDims dims_;
  std::uint64_t seed_ = 0;
  std::vector<double> params_;
};

/// Concatenate [v;q;a], zeroing v when mask_vision is set.
void assemble_input(const RewardDims& dims, std::span<const double> v,
                    std::span<const double> q, std::span<const double> a,
                    bool mask_vision, std::span<double> out);

struct PairGrad {
  double loss = 0.0;
  double margin = 0.0;  // r(chosen) - r(rejected)
  std::vector<double> grad;
};

/// Bradley-Terry loss -log sigma(r(chosen) - r(rejected)) and its exact
/// gradient. label = 1 means a1 is chosen, -1 means a2 is chosen.
PairGrad pair_grad(const RewardNet& net, std::span<const double> v,
                   std::span<const double> q, std::span<const double> a1,
                   std::span<const double> a2, int label, bool mask_vision);

/// Loss only; same convention as pair_grad.
double pair_loss(const RewardNet& net, std::span<const double> v,
                 std::span<const double> q, std::span<const double> a1,
                 std::span<const double> a2, int label, bool mask_vision);

/// -log sigma(m), evaluated without overflow.
double bt_loss_from_margin(double margin);
double sigmoid(double x);

/// Relative error used by the gradient checker: |a - f| / max(1e-3, |a|, |f|).
/// The floor keeps roundoff on near-zero gradients from dominating.
double relative_gradient_error(double analytic, double numeric);

/// Max relative error of `analytic` against central differences of pair_loss
/// over every parameter.
double fd_check(const RewardNet& net, std::span<const double> v, std::span<const double> q,
                std::span<const double> a1, std::span<const double> a2, int label,
                bool mask_vision, std::span<const double> analytic, double step = 1e-6);

/// fd_check against pair_grad's own gradient.
double fd_check(const RewardNet& net, std::span<const double> v, std::span<const double> q,
                std::span<const double> a1, std::span<const double> a2, int label,
                bool mask_vision, double step = 1e-6);

// ---------------------------------------------------------------------------
// AdamW with linear warmup and cosine decay
// ---------------------------------------------------------------------------

enum class LrSchedule { kWarmupCosine, kConstant };

struct AdamWConfig {
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  double warmup_ratio = 0.1;
  std::int64_t total_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule = LrSchedule::kWarmupCosine;
};

class AdamW {
 public:
  AdamW(const AdamWConfig& config, std::size_t num_params);

  /// Learning rate applied by the update issued at step index `step`.
  double lr_at(std::int64_t step) const;
  std::int64_t warmup_steps() const;
  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

  /// Decoupled weight decay followed by the bias-corrected Adam update.
  /// Throws RunCompleteError once step_count() reaches total_steps.
  void step(std::span<double> params, std::span<const double> grads);

 private:
  AdamWConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// {dims, seed, W1, b1, W2, b2}; doubles round-trip bit-exactly.
nlohmann::json net_to_json(const RewardNet& net);
RewardNet net_from_json(const nlohmann::json& doc);

}  // namespace mmrm
