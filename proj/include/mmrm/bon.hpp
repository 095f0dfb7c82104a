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

// Best-of-N evaluation. For a pool of M scored candidates, the expected judge
// score of the reward-argmax of a uniformly random N-subset is computed three
// ways: by enumerating every subset, in closed form from rank weights, and by
// Monte Carlo. Argmax ties go to the lowest candidate index in all three.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmrm/envgen.hpp"
#include "mmrm/numcore.hpp"

namespace mmrm {

struct CandidatePool {
  std::string pool_id;
  std::string env_id;
  Vec64 v;
  Vec64 q;
  std::vector<Vec64> answers;
  std::vector<double> quality;  // s* of each answer
  std::vector<double> judge;
  std::map<std::string, std::vector<double>> rewards;  // per net label

  std::size_t size() const { return answers.size(); }
};

struct PoolOptions {
  std::size_t candidates = 64;
  std::vector<double> content_scales{0.5, 1.0, 2.0};
  /// Chance that a candidate carries the environment's shortcut marker,
  /// drawn independently of its quality.
  double marker_prob = 0.5;
  double judge_noise = 0.1;
};

/// s* plus N(0, noise_sd) noise, mapped affinely so that 0 lands on 5 and
/// six quality standard deviations span the half-range, then clamped to
/// [0, 10].
class SimulatedJudge {
 public:
  explicit SimulatedJudge(const Family& family, double noise_sd = 0.1);

  double score(std::span<const double> v, std::span<const double> q, std::span<const double> a,
               Rng& rng) const;
  double rescale(double raw_quality) const;
  double noise_sd() const { return noise_sd_; }

 private:
  const Family* family_;
  double noise_sd_;
  double scale_;
};

/// Deterministic in (family, env, seed): pool k draws from derive_seed(seed, k).
std::vector<CandidatePool> make_pools(const Family& family, const std::string& env_id,
                                      std::size_t count, std::uint64_t seed,
                                      const PoolOptions& options = {});

/// Fills pool.rewards[label] with the net's scores; text-only nets see v zeroed.
void score_pools(std::vector<CandidatePool>& pools, const std::string& label, const RewardNet& net,
                 bool mask_vision);

// ---------------------------------------------------------------------------
// Estimators
// ---------------------------------------------------------------------------

inline constexpr std::size_t kExhaustiveLimit = 20;

/// Exact C(n, k) for n ≤ 128; throws DomainError above.
unsigned __int128 binomial(std::size_t n, std::size_t k);
double binomial_double(std::size_t n, std::size_t k);

/// Weight of ascending rank i (index i-1 in the result): C(i-1, N-1) / C(M, N).
std::vector<double> rank_weights(std::size_t m, std::size_t n);

/// Candidate indices in ascending (reward, index descending) order.
std::vector<std::size_t> bon_order(std::span<const double> rewards);

/// Throws DomainError when M > kExhaustiveLimit, N == 0 or N > M.
double bon_exhaustive(std::span<const double> rewards, std::span<const double> judge,
                      std::size_t n);
/// Throws DomainError when N == 0, N > M or M > 128.
double bon_fast(std::span<const double> rewards, std::span<const double> judge, std::size_t n);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

McEstimate bon_mc_check(std::span<const double> rewards, std::span<const double> judge,
                        std::size_t n, std::size_t draws, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Curves
// ---------------------------------------------------------------------------

struct BonCurve {
  std::string label;
  std::string pool_env;
  std::vector<std::size_t> n;
  std::vector<double> score;

  double at(std::size_t n_value) const;
};

std::vector<std::size_t> default_bon_grid(std::size_t m);

/// Mean of bon_fast over pools for each N, using pool.rewards[label].
BonCurve bon_curve(std::span<const CandidatePool> pools, const std::string& label,
                   std::span<const std::size_t> grid);

std::string curve_to_csv(const BonCurve& curve);
nlohmann::json pool_to_json(const CandidatePool& pool);

}  // namespace mmrm
