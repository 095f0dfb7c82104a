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

#include "mmrm/kernels.hpp"

#include <cstddef>

#include "mmrm/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mmrm::kernels {

namespace {

using Index = std::ptrdiff_t;

Index as_index(std::size_t n) { return static_cast<Index>(n); }

PairGrad one_grad(const RewardNet& net, const PreferenceSample& s, bool mask_vision) {
  return pair_grad(net, s.v, s.q, s.a1, s.a2, s.y, mask_vision);
}

ScoredPair one_score(const RewardNet& net, const PreferenceSample& s, bool mask_vision) {
  const auto& c = s.chosen();
  const auto& r = s.rejected();
  if (mask_vision) return {net.masked_forward(s.v, s.q, c), net.masked_forward(s.v, s.q, r)};
  return {net.forward(s.v, s.q, c), net.forward(s.v, s.q, r)};
}

void check_weights(std::span<const PairGrad> grads, std::span<const double> weights) {
  if (grads.empty()) throw DimensionError("weighted_mean: empty batch");
  if (weights.size() != grads.size()) {
    throw DimensionError("weighted_mean: one weight per gradient required");
  }
}

}  // namespace

// ---------------------------------------------------------------------------

namespace serial {

std::vector<PairGrad> pair_grads(const RewardNet& net, std::span<const PreferenceSample> samples,
                                 std::span<const std::size_t> idx, bool mask_vision) {
  std::vector<PairGrad> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = one_grad(net, samples[idx[k]], mask_vision);
  return out;
}

std::vector<double> weighted_mean(std::span<const PairGrad> grads, std::span<const double> weights) {
  check_weights(grads, weights);
  const std::size_t n = grads.front().grad.size();
  const double inv = 1.0 / static_cast<double>(grads.size());
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) s += weights[k] * grads[k].grad[j];
    out[j] = s * inv;
  }
  return out;
}

std::vector<ScoredPair> score_pairs(const RewardNet& net, std::span<const PreferenceSample> samples,
                                    bool mask_vision) {
  std::vector<ScoredPair> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = one_score(net, samples[i], mask_vision);
  return out;
}

std::vector<double> pair_losses(const RewardNet& net, std::span<const PreferenceSample> samples,
                                bool mask_vision) {
  std::vector<double> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ScoredPair p = one_score(net, samples[i], mask_vision);
    out[i] = bt_loss_from_margin(p.chosen - p.rejected);
  }
  return out;
}

std::vector<double> score_candidates(const RewardNet& net, std::span<const double> v,
                                     std::span<const double> q, std::span<const Vec64> answers) {
  std::vector<double> out(answers.size());
  for (std::size_t j = 0; j < answers.size(); ++j) out[j] = net.forward(v, q, answers[j]);
  return out;
}

}  // namespace serial

// ---------------------------------------------------------------------------

namespace omp {

std::vector<PairGrad> pair_grads(const RewardNet& net, std::span<const PreferenceSample> samples,
                                 std::span<const std::size_t> idx, bool mask_vision) {
  std::vector<PairGrad> out(idx.size());
#pragma omp parallel for schedule(static)
  for (Index k = 0; k < as_index(idx.size()); ++k) {
    out[static_cast<std::size_t>(k)] =
        one_grad(net, samples[idx[static_cast<std::size_t>(k)]], mask_vision);
  }
  return out;
}

std::vector<double> weighted_mean(std::span<const PairGrad> grads, std::span<const double> weights) {
  check_weights(grads, weights);
  const std::size_t n = grads.front().grad.size();
  const double inv = 1.0 / static_cast<double>(grads.size());
  std::vector<double> out(n, 0.0);
  // Parallel over parameters; each entry still sums samples in order.
#pragma omp parallel for schedule(static)
  for (Index jj = 0; jj < as_index(n); ++jj) {
    const auto j = static_cast<std::size_t>(jj);
    double s = 0.0;
    for (std::size_t k = 0; k < grads.size(); ++k) s += weights[k] * grads[k].grad[j];
    out[j] = s * inv;
  }
  return out;
}

std::vector<ScoredPair> score_pairs(const RewardNet& net, std::span<const PreferenceSample> samples,
                                    bool mask_vision) {
  std::vector<ScoredPair> out(samples.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < as_index(samples.size()); ++i) {
    out[static_cast<std::size_t>(i)] = one_score(net, samples[static_cast<std::size_t>(i)], mask_vision);
  }
  return out;
}

std::vector<double> pair_losses(const RewardNet& net, std::span<const PreferenceSample> samples,
                                bool mask_vision) {
  std::vector<double> out(samples.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < as_index(samples.size()); ++i) {
    const ScoredPair p = one_score(net, samples[static_cast<std::size_t>(i)], mask_vision);
    out[static_cast<std::size_t>(i)] = bt_loss_from_margin(p.chosen - p.rejected);
  }
  return out;
}

std::vector<double> score_candidates(const RewardNet& net, std::span<const double> v,
                                     std::span<const double> q, std::span<const Vec64> answers) {
  std::vector<double> out(answers.size());
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < as_index(answers.size()); ++j) {
    out[static_cast<std::size_t>(j)] = net.forward(v, q, answers[static_cast<std::size_t>(j)]);
  }
  return out;
}

}  // namespace omp

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace mmrm::kernels
