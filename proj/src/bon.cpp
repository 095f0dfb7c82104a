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

#include "mmrm/bon.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "mmrm/errors.hpp"
#include "mmrm/kernels.hpp"

namespace mmrm {

namespace {

constexpr std::size_t kMaxBinomial = 128;

using U128 = unsigned __int128;

const std::vector<std::array<U128, kMaxBinomial + 1>>& pascal() {
  static const auto table = [] {
    std::vector<std::array<U128, kMaxBinomial + 1>> t(kMaxBinomial + 1);
    for (auto& row : t) row.fill(0);
    for (std::size_t n = 0; n <= kMaxBinomial; ++n) {
      t[n][0] = 1;
      for (std::size_t k = 1; k <= n; ++k) t[n][k] = t[n - 1][k - 1] + (k < n ? t[n - 1][k] : 0);
    }
    return t;
  }();
  return table;
}

void check_pool(std::span<const double> rewards, std::span<const double> judge, std::size_t n) {
  if (rewards.size() != judge.size()) throw DimensionError("bon: rewards and judge scores differ in length");
  if (rewards.empty()) throw DomainError("bon: empty pool");
  if (n == 0 || n > rewards.size()) throw DomainError("bon: N must satisfy 1 <= N <= M");
  if (!all_finite(rewards) || !all_finite(judge)) throw DomainError("bon: non-finite score");
}

// Lowest index wins ties.
std::size_t argmax_of(std::span<const double> rewards, std::span<const std::size_t> subset) {
  std::size_t best = subset[0];
  for (std::size_t k = 1; k < subset.size(); ++k) {
    const std::size_t c = subset[k];
    if (rewards[c] > rewards[best] || (rewards[c] == rewards[best] && c < best)) best = c;
  }
  return best;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------

SimulatedJudge::SimulatedJudge(const Family& family, double noise_sd)
    : family_(&family), noise_sd_(noise_sd) {
  if (!(noise_sd >= 0.0)) throw DomainError("judge noise must be nonnegative");
  const double sd = family.quality_scale();
  if (!(sd > 0.0)) throw DomainError("judge needs a nondegenerate quality signal");
  scale_ = 5.0 / (6.0 * sd);
}

double SimulatedJudge::rescale(double raw_quality) const {
  return std::clamp(5.0 + scale_ * raw_quality, 0.0, 10.0);
}

double SimulatedJudge::score(std::span<const double> v, std::span<const double> q,
                             std::span<const double> a, Rng& rng) const {
  const double noise = noise_sd_ > 0.0 ? noise_sd_ * rng.normal() : 0.0;
  return rescale(family_->quality(v, q, a) + noise);
}

std::vector<CandidatePool> make_pools(const Family& family, const std::string& env_id,
                                      std::size_t count, std::uint64_t seed,
                                      const PoolOptions& options) {
  if (options.candidates == 0) throw DomainError("pools need at least one candidate");
  if (options.content_scales.empty()) throw DomainError("pools need at least one content scale");
  const EnvironmentSpec& spec = family.spec(env_id);
  const Vec64& u = family.shortcut_dir(env_id);
  const RewardDims& d = family.dims();
  const AnswerLayout& lay = family.options().layout;
  const SimulatedJudge judge(family, options.judge_noise);
  const std::uint64_t base = derive_seed(seed, "pools/" + env_id);

  std::vector<CandidatePool> pools(count);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t kk = 0; kk < static_cast<std::ptrdiff_t>(count); ++kk) {
    const auto k = static_cast<std::size_t>(kk);
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(k)));
    Rng judge_rng(derive_seed(derive_seed(base, "judge"), static_cast<std::uint64_t>(k)));
    CandidatePool p;
    p.pool_id = env_id + "-" + std::to_string(k);
    p.env_id = env_id;
    p.v = Vec64(d.d_v);
    p.q = Vec64(d.d_q);
    for (std::size_t j = 0; j < d.d_v; ++j) p.v[j] = rng.normal();
    for (std::size_t j = 0; j < d.d_q; ++j) p.q[j] = rng.normal();
    for (std::size_t c = 0; c < options.candidates; ++c) {
      const double scale = options.content_scales[rng.below(options.content_scales.size())];
      Vec64 a(d.d_a);
      for (std::size_t j = 0; j < lay.content_end; ++j) a[j] = scale * rng.normal();
      for (std::size_t j = lay.content_end; j < lay.marker_end; ++j) {
        a[j] = family.options().marker_noise * rng.normal();
      }
      const bool marked = rng.bernoulli(options.marker_prob);
      const bool longer = rng.bernoulli(0.5);
      const double len = std::abs(rng.normal());
      if (marked) {
        for (std::size_t j = 0; j < d.d_a; ++j) a[j] += spec.alpha * u[j];
      }
      a[lay.length_index] = len + (longer ? family.options().length_offset : 0.0);
      p.quality.push_back(family.quality(p.v, p.q, a));
      p.judge.push_back(judge.score(p.v, p.q, a, judge_rng));
      p.answers.push_back(std::move(a));
    }
    pools[k] = std::move(p);
  }
  return pools;
}

void score_pools(std::vector<CandidatePool>& pools, const std::string& label, const RewardNet& net,
                 bool mask_vision) {
  for (auto& p : pools) {
    const Vec64 v = mask_vision ? Vec64(p.v.size()) : p.v;
    p.rewards[label] = kernels::omp::score_candidates(net, v, p.q, p.answers);
  }
}

// ---------------------------------------------------------------------------

unsigned __int128 binomial(std::size_t n, std::size_t k) {
  if (n > kMaxBinomial) throw DomainError("binomial: n above exact-table limit");
  if (k > n) return 0;
  return pascal()[n][k];
}

double binomial_double(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  if (n <= kMaxBinomial) return static_cast<double>(pascal()[n][k]);
  const auto ln = [](double x) { return std::lgamma(x + 1.0); };
  return std::exp(ln(static_cast<double>(n)) - ln(static_cast<double>(k)) -
                  ln(static_cast<double>(n - k)));
}

std::vector<double> rank_weights(std::size_t m, std::size_t n) {
  if (n == 0 || n > m) throw DomainError("rank_weights: N must satisfy 1 <= N <= M");
  const double total = binomial_double(m, n);
  std::vector<double> w(m);
  for (std::size_t i = 1; i <= m; ++i) w[i - 1] = binomial_double(i - 1, n - 1) / total;
  return w;
}

std::vector<std::size_t> bon_order(std::span<const double> rewards) {
  std::vector<std::size_t> order(rewards.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (rewards[a] != rewards[b]) return rewards[a] < rewards[b];
    return a > b;
  });
  return order;
}

double bon_exhaustive(std::span<const double> rewards, std::span<const double> judge,
                      std::size_t n) {
  check_pool(rewards, judge, n);
  const std::size_t m = rewards.size();
  if (m > kExhaustiveLimit) {
    throw DomainError("bon_exhaustive: M = " + std::to_string(m) + " exceeds the enumeration limit of " +
                      std::to_string(kExhaustiveLimit) + "; use bon_fast");
  }
  std::vector<std::size_t> subset(n);
  std::iota(subset.begin(), subset.end(), std::size_t{0});
  double sum = 0.0;
  std::uint64_t count = 0;
  while (true) {
    sum += judge[argmax_of(rewards, subset)];
    ++count;
    std::size_t i = n;
    while (i > 0 && subset[i - 1] == m - n + i - 1) --i;
    if (i == 0) break;
    ++subset[i - 1];
    for (std::size_t j = i; j < n; ++j) subset[j] = subset[j - 1] + 1;
  }
  return sum / static_cast<double>(count);
}

double bon_fast(std::span<const double> rewards, std::span<const double> judge, std::size_t n) {
  check_pool(rewards, judge, n);
  const std::size_t m = rewards.size();
  if (m > kMaxBinomial) throw DomainError("bon_fast: pool larger than the exact binomial table");
  const auto order = bon_order(rewards);
  double sum = 0.0;
  for (std::size_t i = n; i <= m; ++i) {
    sum += static_cast<double>(binomial(i - 1, n - 1)) * judge[order[i - 1]];
  }
  return sum / static_cast<double>(binomial(m, n));
}

McEstimate bon_mc_check(std::span<const double> rewards, std::span<const double> judge,
                        std::size_t n, std::size_t draws, std::uint64_t seed) {
  check_pool(rewards, judge, n);
  if (draws == 0) throw DomainError("bon_mc_check: draws must be positive");
  const std::size_t m = rewards.size();
  Rng rng(seed);
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double mean = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < draws; ++t) {
    for (std::size_t j = 0; j < n; ++j) std::swap(idx[j], idx[j + rng.below(m - j)]);
    const double x = judge[argmax_of(rewards, std::span<const std::size_t>(idx.data(), n))];
    const double delta = x - mean;
    mean += delta / static_cast<double>(t + 1);
    m2 += delta * (x - mean);
  }
  const double k = static_cast<double>(draws);
  McEstimate e;
  e.mean = mean;
  const double var = draws > 1 ? m2 / (k - 1.0) : 0.0;
  e.std_error = std::sqrt(var / k);
  return e;
}

// ---------------------------------------------------------------------------

double BonCurve::at(std::size_t n_value) const {
  const auto it = std::find(n.begin(), n.end(), n_value);
  if (it == n.end()) throw DomainError("curve has no point at N = " + std::to_string(n_value));
  return score[static_cast<std::size_t>(it - n.begin())];
}

std::vector<std::size_t> default_bon_grid(std::size_t m) {
  std::vector<std::size_t> grid;
  for (std::size_t k = 1; k <= m; k *= 2) grid.push_back(k);
  if (grid.back() != m) grid.push_back(m);
  return grid;
}

BonCurve bon_curve(std::span<const CandidatePool> pools, const std::string& label,
                   std::span<const std::size_t> grid) {
  if (pools.empty()) throw DomainError("bon_curve: no pools");
  BonCurve c;
  c.label = label;
  c.pool_env = pools.front().env_id;
  c.n.assign(grid.begin(), grid.end());
  std::vector<std::vector<double>> per_pool(pools.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t kk = 0; kk < static_cast<std::ptrdiff_t>(pools.size()); ++kk) {
    const auto& p = pools[static_cast<std::size_t>(kk)];
    const auto it = p.rewards.find(label);
    if (it == p.rewards.end()) continue;
    auto& row = per_pool[static_cast<std::size_t>(kk)];
    for (std::size_t n : grid) row.push_back(bon_fast(it->second, p.judge, n));
  }
  c.score.assign(grid.size(), 0.0);
  for (std::size_t k = 0; k < pools.size(); ++k) {
    if (per_pool[k].empty()) throw ConfigError("pool " + pools[k].pool_id + " not scored by '" + label + "'");
    for (std::size_t g = 0; g < grid.size(); ++g) c.score[g] += per_pool[k][g];
  }
  for (double& s : c.score) s /= static_cast<double>(pools.size());
  return c;
}

std::string curve_to_csv(const BonCurve& curve) {
  std::ostringstream out;
  out << "N,score\n";
  for (std::size_t i = 0; i < curve.n.size(); ++i) out << curve.n[i] << ',' << fmt(curve.score[i]) << '\n';
  return out.str();
}

nlohmann::json pool_to_json(const CandidatePool& pool) {
  nlohmann::json rewards = nlohmann::json::object();
  for (const auto& [label, r] : pool.rewards) rewards[label] = r;
  return {{"pool_id", pool.pool_id},
          {"env_id", pool.env_id},
          {"judge", pool.judge},
          {"quality", pool.quality},
          {"rewards", rewards}};
}

}  // namespace mmrm
