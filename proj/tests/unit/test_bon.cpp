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


#include <cmath>
#include <numeric>

#include "doctest.h"
#include "mmrm/bon.hpp"
#include "mmrm/errors.hpp"
#include "mmrm/kernels.hpp"

using namespace mmrm;

namespace {

std::vector<double> draws(std::size_t m, std::uint64_t seed, double round_to = 0.0) {
  Rng rng(seed);
  std::vector<double> x(m);
  for (auto& v : x) {
    v = rng.normal();
    if (round_to > 0.0) v = std::round(v / round_to) * round_to;
  }
  return x;
}

}  // namespace

TEST_CASE("binomial: exact table and large-n fallback") {
  CHECK(binomial(5, 2) == 10);
  CHECK(binomial(0, 0) == 1);
  CHECK(binomial(3, 4) == 0);
  const unsigned __int128 c128 =
      static_cast<unsigned __int128>(2395114604192808286ULL) * 10000000000000000000ULL +
      6135587776380551750ULL;
  CHECK(binomial(128, 64) == c128);
  CHECK_THROWS_AS(binomial(129, 3), DomainError);
  CHECK(binomial_double(200, 100) == doctest::Approx(9.0548514656103281e58).epsilon(1e-9));
}

TEST_CASE("rank weights: small example and normalization") {
  const auto w = rank_weights(4, 2);
  CHECK(w[0] == 0.0);
  CHECK(w[1] == doctest::Approx(1.0 / 6.0));
  CHECK(w[2] == doctest::Approx(2.0 / 6.0));
  CHECK(w[3] == doctest::Approx(3.0 / 6.0));
  for (std::size_t m : {1, 7, 64, 128, 300}) {
    for (std::size_t n : {std::size_t{1}, m / 2 + 1, m}) {
      const auto r = rank_weights(m, n);
      CHECK(std::accumulate(r.begin(), r.end(), 0.0) == doctest::Approx(1.0));
    }
  }
  CHECK_THROWS_AS(rank_weights(3, 0), DomainError);
  CHECK_THROWS_AS(rank_weights(3, 4), DomainError);
}

TEST_CASE("bon: hand-computed pool") {
  const std::vector<double> r{1.0, 2.0, 3.0, 4.0};
  const std::vector<double> j{2.0, 8.0, 4.0, 6.0};
  CHECK(bon_fast(r, j, 1) == doctest::Approx(5.0));
  CHECK(bon_fast(r, j, 4) == doctest::Approx(6.0));
  // N = 2: best is rank 2, 3, 4 in 1, 2, 3 of the six pairs.
  CHECK(bon_fast(r, j, 2) == doctest::Approx((8.0 + 2 * 4.0 + 3 * 6.0) / 6.0));
  CHECK(bon_exhaustive(r, j, 2) == doctest::Approx(bon_fast(r, j, 2)));
}

TEST_CASE("bon: ties resolve to the lowest index") {
  const std::vector<double> r{1.0, 1.0, 1.0};
  const std::vector<double> j{3.0, 5.0, 9.0};
  CHECK(bon_order(r) == std::vector<std::size_t>{2, 1, 0});
  CHECK(bon_fast(r, j, 3) == 3.0);
  // pairs {0,1},{0,2},{1,2} pick 0, 0, 1.
  CHECK(bon_exhaustive(r, j, 2) == doctest::Approx((3.0 + 3.0 + 5.0) / 3.0));
  CHECK(bon_fast(r, j, 2) == doctest::Approx((3.0 + 3.0 + 5.0) / 3.0));
}

TEST_CASE("bon: closed form equals enumeration for every M <= 20 and N") {
  for (std::size_t m = 1; m <= kExhaustiveLimit; ++m) {
    const auto r = draws(m, 100 + m, m % 2 == 0 ? 0.5 : 0.0);  // even M has ties
    const auto j = draws(m, 200 + m);
    for (std::size_t n = 1; n <= m; ++n) {
      CAPTURE(m);
      CAPTURE(n);
      CHECK(std::abs(bon_fast(r, j, n) - bon_exhaustive(r, j, n)) <= 1e-12);
    }
  }
  const auto r = draws(21, 1), j = draws(21, 2);
  CHECK_THROWS_AS(bon_exhaustive(r, j, 3), DomainError);
  CHECK_THROWS_AS(bon_fast(r, j, 0), DomainError);
  CHECK_THROWS_AS(bon_fast(r, j, 22), DomainError);
  CHECK_THROWS_AS(bon_fast(r, std::vector<double>(20), 2), DimensionError);
}

TEST_CASE("bon: Monte Carlo agrees with the closed form") {
  const auto r = draws(64, 7, 0.25), j = draws(64, 8);
  for (std::size_t n : {1, 4, 16, 64}) {
    const McEstimate e = bon_mc_check(r, j, n, 40000, 9 + n);
    CHECK(std::abs(e.mean - bon_fast(r, j, n)) <= 4.0 * e.std_error + 1e-12);
  }
  CHECK(bon_mc_check(r, j, 64, 10, 1).std_error == 0.0);
}

TEST_CASE("bon: oracle reward gives a nondecreasing curve") {
  const auto q = draws(64, 11);
  double prev = -1e9;
  for (std::size_t n = 1; n <= 64; ++n) {
    const double s = bon_fast(q, q, n);
    CHECK(s >= prev - 1e-12);
    prev = s;
  }
  CHECK(prev == *std::max_element(q.begin(), q.end()));
}

TEST_CASE("judge: affine map and clamp") {
  const Family f = default_family(51);
  const SimulatedJudge judge(f, 0.1);
  const double sd = f.quality_scale();
  CHECK(judge.rescale(0.0) == 5.0);
  CHECK(judge.rescale(6.0 * sd) == doctest::Approx(10.0));
  CHECK(judge.rescale(-3.0 * sd) == doctest::Approx(2.5));
  CHECK(judge.rescale(100.0 * sd) == 10.0);
  CHECK(judge.rescale(-100.0 * sd) == 0.0);
  const SimulatedJudge exact(f, 0.0);
  Rng rng(1);
  const Dataset d = f.sample("A", Split::kTest);
  const auto& s = d.samples[0];
  CHECK(exact.score(s.v, s.q, s.a1, rng) == exact.rescale(f.quality(s.v, s.q, s.a1)));
  CHECK_THROWS_AS(SimulatedJudge(f, -1.0), DomainError);
}

TEST_CASE("pools: deterministic, sized, judged by quality") {
  const Family f = default_family(52);
  PoolOptions o;
  o.candidates = 16;
  const auto a = make_pools(f, "B", 5, 77, o);
  const auto b = make_pools(f, "B", 5, 77, o);
  const auto c = make_pools(f, "B", 6, 77, o);
  REQUIRE(a.size() == 5);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].size() == 16);
    CHECK(a[k].env_id == "B");
    CHECK(a[k].judge == b[k].judge);
    CHECK(a[k].answers == c[k].answers);  // adding pools keeps earlier ones
    for (std::size_t i = 0; i < a[k].size(); ++i) {
      CHECK(a[k].quality[i] == f.quality(a[k].v, a[k].q, a[k].answers[i]));
      CHECK(a[k].judge[i] >= 0.0);
      CHECK(a[k].judge[i] <= 10.0);
    }
  }
  CHECK(a[0].pool_id != a[1].pool_id);
  CHECK(make_pools(f, "B", 1, 78, o)[0].judge != a[0].judge);

  // Judge noise is small, so judge order tracks quality.
  std::vector<double> jq, qq;
  for (const auto& p : a) {
    jq.insert(jq.end(), p.judge.begin(), p.judge.end());
    qq.insert(qq.end(), p.quality.begin(), p.quality.end());
  }
  double corr_num = 0.0;
  for (std::size_t i = 0; i < jq.size(); ++i)
    for (std::size_t k = i + 1; k < jq.size(); ++k)
      corr_num += ((jq[i] - jq[k]) * (qq[i] - qq[k]) > 0) ? 1.0 : -1.0;
  CHECK(corr_num > 0.0);
}

TEST_CASE("score_pools and bon_curve") {
  const Family f = default_family(53);
  PoolOptions o;
  o.candidates = 32;
  auto pools = make_pools(f, "A", 4, 5, o);
  const RewardNet net = RewardNet::initialize(f.dims(), 3);
  score_pools(pools, "standard", net, false);
  score_pools(pools, "text_only", net, true);
  for (const auto& p : pools) {
    CHECK(p.rewards.at("standard")[3] == net.forward(p.v, p.q, p.answers[3]));
    CHECK(p.rewards.at("text_only")[3] == net.masked_forward(p.v, p.q, p.answers[3]));
  }
  CHECK(default_bon_grid(64) == std::vector<std::size_t>{1, 2, 4, 8, 16, 32, 64});
  CHECK(default_bon_grid(20) == std::vector<std::size_t>{1, 2, 4, 8, 16, 20});
  const auto grid = default_bon_grid(32);
  const int before = kernels::max_threads();
  kernels::set_threads(1);
  const BonCurve c1 = bon_curve(pools, "standard", grid);
  kernels::set_threads(3);
  const BonCurve c3 = bon_curve(pools, "standard", grid);
  kernels::set_threads(before);
  CHECK(bit_identical(c1.score, c3.score));
  double m = 0.0;
  for (const auto& p : pools) m += bon_fast(p.rewards.at("standard"), p.judge, 8);
  CHECK(c1.at(8) == doctest::Approx(m / 4.0));
  CHECK(c1.pool_env == "A");
  CHECK_THROWS_AS(c1.at(3), DomainError);
  CHECK_THROWS_AS(bon_curve(pools, "shortcut_aware", grid), ConfigError);
  CHECK(curve_to_csv(c1).rfind("N,score\n1,", 0) == 0);
  CHECK(pool_to_json(pools[0]).at("rewards").contains("text_only"));
}

TEST_CASE("bon: worked three-candidate example") {
  // Candidate 3 wins {1,3} and {2,3}; candidate 2 wins {1,2}.
  const std::vector<double> r{1.0, 2.0, 3.0};
  const std::vector<double> j{10.0, 0.0, 5.0};
  CHECK(bon_exhaustive(r, j, 2) == doctest::Approx(10.0 / 3.0));
  CHECK(bon_fast(r, j, 2) == doctest::Approx(10.0 / 3.0));
}

TEST_CASE("bon: degenerate N and constant judges") {
  const auto r = draws(40, 21), j = draws(40, 22);
  CHECK(bon_fast(r, j, 1) == doctest::Approx(std::accumulate(j.begin(), j.end(), 0.0) / 40.0));
  const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  CHECK(bon_fast(r, j, 40) == doctest::Approx(j[best]));
  const std::vector<double> c(40, 7.25);
  for (std::size_t n = 1; n <= 40; ++n) CHECK(bon_fast(r, c, n) == doctest::Approx(7.25));
}

TEST_CASE("judge: noiseless ranking follows quality, random answers centre on 5") {
  const Family f = default_family(54);
  const SimulatedJudge exact(f, 0.0), noisy(f, 0.1);
  Rng draw(5), noise(6);
  double sum = 0.0;
  const int n = 20000;
  std::vector<std::pair<double, double>> qj;
  for (int i = 0; i < n; ++i) {
    Vec64 v(f.dims().d_v), q(f.dims().d_q), a(f.dims().d_a);
    for (auto* x : {&v, &q, &a})
      for (std::size_t k = 0; k < x->size(); ++k) (*x)[k] = draw.normal();
    sum += noisy.score(v, q, a, noise);
    if (i < 200) qj.emplace_back(f.quality(v, q, a), exact.score(v, q, a, noise));
  }
  CHECK(std::abs(sum / n - 5.0) <= 0.2);
  for (const auto& [qa, ja] : qj)
    for (const auto& [qb, jb] : qj)
      if (qa < qb) CHECK(ja <= jb);
}
