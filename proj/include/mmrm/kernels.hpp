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

// Data-parallel inner loops. Each kernel exists twice: `serial` is the
// reference kept for tests and benchmarks, `omp` is what the library calls.
// Both write per-item results into preallocated slots and reduce in index
// order, so their outputs are bit-identical for any thread count.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmrm/envgen.hpp"
#include "mmrm/numcore.hpp"

namespace mmrm::kernels {

struct ScoredPair {
  double chosen = 0.0;
  double rejected = 0.0;
};

namespace serial {

/// pair_grad for samples[idx[k]], k = 0..idx.size()-1.
std::vector<PairGrad> pair_grads(const RewardNet& net, std::span<const PreferenceSample> samples,
                                 std::span<const std::size_t> idx, bool mask_vision);

/// sum_k weights[k] * grads[k] / grads.size(), summed in k order per entry.
std::vector<double> weighted_mean(std::span<const PairGrad> grads, std::span<const double> weights);

std::vector<ScoredPair> score_pairs(const RewardNet& net, std::span<const PreferenceSample> samples,
                                    bool mask_vision);

/// Bradley-Terry loss of every sample.
std::vector<double> pair_losses(const RewardNet& net, std::span<const PreferenceSample> samples,
                                bool mask_vision);

/// forward(v, q, answers[j]) for every candidate.
std::vector<double> score_candidates(const RewardNet& net, std::span<const double> v,
                                     std::span<const double> q, std::span<const Vec64> answers);

}  // namespace serial

namespace omp {

std::vector<PairGrad> pair_grads(const RewardNet& net, std::span<const PreferenceSample> samples,
                                 std::span<const std::size_t> idx, bool mask_vision);
std::vector<double> weighted_mean(std::span<const PairGrad> grads, std::span<const double> weights);
std::vector<ScoredPair> score_pairs(const RewardNet& net, std::span<const PreferenceSample> samples,
                                    bool mask_vision);
std::vector<double> pair_losses(const RewardNet& net, std::span<const PreferenceSample> samples,
                                bool mask_vision);
std::vector<double> score_candidates(const RewardNet& net, std::span<const double> v,
                                     std::span<const double> q, std::span<const Vec64> answers);

}  // namespace omp

/// Threads used by the omp kernels (1 when built without OpenMP).
int max_threads();
void set_threads(int n);

}  // namespace mmrm::kernels
