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

#include "mmrm/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <string>

#include "mmrm/errors.hpp"

namespace mmrm {

double Mat64::frobenius_norm() const { return norm(data_); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

bool bit_identical(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t parent, std::string_view component) {
  return splitmix64(parent ^ fnv1a64(component));
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) {
  return splitmix64(splitmix64(parent) + index);
}

// ---------------------------------------------------------------------------

RewardNet::RewardNet(const RewardDims& dims, std::uint64_t seed)
    : dims_(dims), seed_(seed), params_(dims.hidden * dims.input_dim() + 2 * dims.hidden + 1, 0.0) {
  if (dims.hidden == 0 || dims.input_dim() == 0) {
    throw DimensionError("RewardNet: hidden and input dimensions must be positive");
  }
}

RewardNet RewardNet::zeros(const RewardDims& dims) { return RewardNet(dims, 0); }

RewardNet RewardNet::initialize(const RewardDims& dims, std::uint64_t seed) {
  RewardNet net(dims, seed);
  Rng rng(seed);
  const double bound1 = 1.0 / std::sqrt(static_cast<double>(dims.input_dim()));
  const double bound2 = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
  for (std::size_t i = 0; i < net.b1_offset(); ++i) net.params_[i] = rng.uniform(-bound1, bound1);
  for (std::size_t h = 0; h < dims.hidden; ++h) net.w2(h) = rng.uniform(-bound2, bound2);
  return net;
}

void assemble_input(const RewardDims& dims, std::span<const double> v, std::span<const double> q,
                    std::span<const double> a, bool mask_vision, std::span<double> out) {
  if (v.size() != dims.d_v || q.size() != dims.d_q || a.size() != dims.d_a ||
      out.size() != dims.input_dim()) {
    throw DimensionError("input dimensions (" + std::to_string(v.size()) + ", " +
                         std::to_string(q.size()) + ", " + std::to_string(a.size()) +
                         ") do not match net dims (" + std::to_string(dims.d_v) + ", " +
                         std::to_string(dims.d_q) + ", " + std::to_string(dims.d_a) + ")");
  }
  auto it = out.begin();
  if (mask_vision) {
    it = std::fill_n(it, v.size(), 0.0);
  } else {
    it = std::copy(v.begin(), v.end(), it);
  }
  it = std::copy(q.begin(), q.end(), it);
  std::copy(a.begin(), a.end(), it);
}

double RewardNet::score_input(std::span<const double> x, std::span<double> hidden) const {
  const std::size_t n_in = dims_.input_dim();
  if (x.size() != n_in) throw DimensionError("score_input: wrong input length");
  double r = b2();
  for (std::size_t h = 0; h < dims_.hidden; ++h) {
    const double* row = params_.data() + h * n_in;
    double z = b1(h);
    for (std::size_t i = 0; i < n_in; ++i) z += row[i] * x[i];
    const double act = std::tanh(z);
    if (!hidden.empty()) hidden[h] = act;
    r += w2(h) * act;
  }
  if (!std::isfinite(r)) throw DomainError("reward is not finite");
  return r;
}

double RewardNet::forward(std::span<const double> v, std::span<const double> q,
                          std::span<const double> a) const {
  std::vector<double> x(dims_.input_dim());
  assemble_input(dims_, v, q, a, false, x);
  return score_input(x);
}

double RewardNet::masked_forward(std::span<const double> v, std::span<const double> q,
                                 std::span<const double> a) const {
  std::vector<double> x(dims_.input_dim());
  assemble_input(dims_, v, q, a, true, x);
  return score_input(x);
}

// ---------------------------------------------------------------------------

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double bt_loss_from_margin(double margin) {
  // softplus(-m) = max(-m, 0) + log1p(exp(-|m|))
  return std::max(-margin, 0.0) + std::log1p(std::exp(-std::abs(margin)));
}

namespace {

void check_label(int label) {
  if (label != 1 && label != -1) throw DomainError("label must be 1 or -1");
}

}  // namespace

PairGrad pair_grad(const RewardNet& net, std::span<const double> v, std::span<const double> q,
                   std::span<const double> a1, std::span<const double> a2, int label,
                   bool mask_vision) {
  check_label(label);
  const RewardDims& d = net.dims();
  const std::size_t n_in = d.input_dim();
  const auto chosen = label == 1 ? a1 : a2;
  const auto rejected = label == 1 ? a2 : a1;

  std::vector<double> xc(n_in), xr(n_in), hc(d.hidden), hr(d.hidden);
  assemble_input(d, v, q, chosen, mask_vision, xc);
  assemble_input(d, v, q, rejected, mask_vision, xr);
  const double rc = net.score_input(xc, hc);
  const double rr = net.score_input(xr, hr);

  PairGrad out;
  out.margin = rc - rr;
  out.loss = bt_loss_from_margin(out.margin);
  out.grad.assign(net.num_params(), 0.0);

  // dL/dm = -sigma(-m); chosen contributes +1, rejected -1 to the margin.
  const double dm = -sigmoid(-out.margin);
  for (std::size_t h = 0; h < d.hidden; ++h) {
    out.grad[net.w2_offset() + h] = dm * (hc[h] - hr[h]);
    const double dzc = dm * net.w2(h) * (1.0 - hc[h] * hc[h]);
    const double dzr = -dm * net.w2(h) * (1.0 - hr[h] * hr[h]);
    double* row = out.grad.data() + h * n_in;
    for (std::size_t i = 0; i < n_in; ++i) row[i] = dzc * xc[i] + dzr * xr[i];
    out.grad[net.b1_offset() + h] = dzc + dzr;
  }
  // b2 cancels in the margin.
  out.grad.back() = 0.0;
  return out;
}

double pair_loss(const RewardNet& net, std::span<const double> v, std::span<const double> q,
                 std::span<const double> a1, std::span<const double> a2, int label,
                 bool mask_vision) {
  check_label(label);
  const auto chosen = label == 1 ? a1 : a2;
  const auto rejected = label == 1 ? a2 : a1;
  const double m = mask_vision ? net.masked_forward(v, q, chosen) - net.masked_forward(v, q, rejected)
                               : net.forward(v, q, chosen) - net.forward(v, q, rejected);
  return bt_loss_from_margin(m);
}

double relative_gradient_error(double analytic, double numeric) {
  const double scale = std::max({1e-3, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / scale;
}

double fd_check(const RewardNet& net, std::span<const double> v, std::span<const double> q,
                std::span<const double> a1, std::span<const double> a2, int label,
                bool mask_vision, std::span<const double> analytic, double step) {
  if (analytic.size() != net.num_params()) {
    throw DimensionError("fd_check: gradient length does not match parameter count");
  }
  RewardNet probe = net;
  double worst = 0.0;
  for (std::size_t p = 0; p < probe.num_params(); ++p) {
    const double saved = probe.params()[p];
    probe.params()[p] = saved + step;
    const double up = pair_loss(probe, v, q, a1, a2, label, mask_vision);
    probe.params()[p] = saved - step;
    const double down = pair_loss(probe, v, q, a1, a2, label, mask_vision);
    probe.params()[p] = saved;
    const double numeric = (up - down) / (2.0 * step);
    worst = std::max(worst, relative_gradient_error(analytic[p], numeric));
  }
  return worst;
}

double fd_check(const RewardNet& net, std::span<const double> v, std::span<const double> q,
                std::span<const double> a1, std::span<const double> a2, int label,
                bool mask_vision, double step) {
  const PairGrad g = pair_grad(net, v, q, a1, a2, label, mask_vision);
  return fd_check(net, v, q, a1, a2, label, mask_vision, g.grad, step);
}

// ---------------------------------------------------------------------------

AdamW::AdamW(const AdamWConfig& config, std::size_t num_params)
    : config_(config), m_(num_params, 0.0), v_(num_params, 0.0) {
  if (config.total_steps < 1) throw ConfigError("AdamW: total_steps must be >= 1");
  if (config.warmup_ratio < 0.0 || config.warmup_ratio >= 1.0) {
    throw ConfigError("AdamW: warmup_ratio must lie in [0, 1)");
  }
}

std::int64_t AdamW::warmup_steps() const {
  return static_cast<std::int64_t>(
      std::ceil(config_.warmup_ratio * static_cast<double>(config_.total_steps)));
}

double AdamW::lr_at(std::int64_t step) const {
  if (config_.schedule == LrSchedule::kConstant) return config_.base_lr;
  const std::int64_t warmup = warmup_steps();
  if (step < warmup) {
    return config_.base_lr * static_cast<double>(step) / static_cast<double>(warmup);
  }
  const double span = static_cast<double>(std::max<std::int64_t>(1, config_.total_steps - warmup));
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / span);
  return config_.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DimensionError("AdamW: parameter/gradient shape does not match optimizer state");
  }
  if (step_ >= config_.total_steps) {
    throw RunCompleteError("AdamW: all " + std::to_string(config_.total_steps) +
                           " scheduled steps already taken");
  }
  const double lr = lr_at(step_);
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / bc1;
    const double v_hat = v_[i] / bc2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config_.eps);
  }
}

// ---------------------------------------------------------------------------

nlohmann::json net_to_json(const RewardNet& net) {
  const RewardDims& d = net.dims();
  const auto p = net.params();
  nlohmann::json doc;
  doc["dims"] = {{"d_v", d.d_v}, {"d_q", d.d_q}, {"d_a", d.d_a}, {"hidden", d.hidden}};
  doc["seed"] = net.seed();
  doc["W1"] = std::vector<double>(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(net.b1_offset()));
  doc["b1"] = std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(net.b1_offset()),
                                  p.begin() + static_cast<std::ptrdiff_t>(net.w2_offset()));
  doc["W2"] = std::vector<double>(p.begin() + static_cast<std::ptrdiff_t>(net.w2_offset()),
                                  p.end() - 1);
  doc["b2"] = p.back();
  return doc;
}

RewardNet net_from_json(const nlohmann::json& doc) {
  try {
    RewardDims d;
    d.d_v = doc.at("dims").at("d_v").get<std::size_t>();
    d.d_q = doc.at("dims").at("d_q").get<std::size_t>();
    d.d_a = doc.at("dims").at("d_a").get<std::size_t>();
    d.hidden = doc.at("dims").at("hidden").get<std::size_t>();
    RewardNet net = RewardNet::initialize(d, doc.at("seed").get<std::uint64_t>());
    const auto w1 = doc.at("W1").get<std::vector<double>>();
    const auto b1 = doc.at("b1").get<std::vector<double>>();
    const auto w2 = doc.at("W2").get<std::vector<double>>();
    if (w1.size() != net.b1_offset() || b1.size() != d.hidden || w2.size() != d.hidden) {
      throw DimensionError("serialized RewardNet arrays do not match its dims");
    }
    auto p = net.params();
    std::copy(w1.begin(), w1.end(), p.begin());
    std::copy(b1.begin(), b1.end(), p.begin() + static_cast<std::ptrdiff_t>(net.b1_offset()));
    std::copy(w2.begin(), w2.end(), p.begin() + static_cast<std::ptrdiff_t>(net.w2_offset()));
    p.back() = doc.at("b2").get<double>();
    if (!all_finite(p)) throw DomainError("serialized RewardNet contains non-finite values");
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed RewardNet document: ") + e.what());
  }
}

}  // namespace mmrm
