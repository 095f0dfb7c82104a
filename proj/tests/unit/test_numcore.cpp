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
#include <fstream>

#include "doctest.h"
#include "mmrm/errors.hpp"
#include "mmrm/numcore.hpp"

using namespace mmrm;

namespace {

const RewardDims kDims{16, 8, 16, 32};

std::vector<double> normals(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  for (auto& e : x) e = rng.normal();
  return x;
}

struct Draw {
  std::vector<double> v, q, a1, a2;
};

Draw draw(Rng& rng, const RewardDims& d = kDims) {
  return {normals(rng, d.d_v), normals(rng, d.d_q), normals(rng, d.d_a), normals(rng, d.d_a)};
}

}  // namespace

TEST_CASE("forward: zero net scores zero and b2 passes through") {
  Rng rng(3);
  const Draw x = draw(rng);
  RewardNet net = RewardNet::zeros(kDims);
  CHECK(net.forward(x.v, x.q, x.a1) == 0.0);
  net.b2() = 3.5;
  CHECK(net.forward(x.v, x.q, x.a1) == 3.5);
}

TEST_CASE("forward: matches the independent reference on the frozen case") {
  std::ifstream in(std::string(MMRM_TEST_DATA) + "/forward_case.json");
  REQUIRE(in);
  const auto doc = nlohmann::json::parse(in);
  const RewardNet frozen = net_from_json(doc.at("net"));
  const RewardNet seeded = RewardNet::initialize(kDims, 1);
  CHECK(bit_identical(frozen.params(), seeded.params()));

  Rng rng(2);
  const Draw x = draw(rng);
  CHECK(x.v == doc.at("v").get<std::vector<double>>());
  CHECK(x.a2 == doc.at("a2").get<std::vector<double>>());

  const auto& e = doc.at("expected");
  CHECK(seeded.forward(x.v, x.q, x.a1) == doctest::Approx(e.at("forward_a1").get<double>()).epsilon(1e-12));
  CHECK(seeded.forward(x.v, x.q, x.a2) == doctest::Approx(e.at("forward_a2").get<double>()).epsilon(1e-12));
  CHECK(seeded.masked_forward(x.v, x.q, x.a1) ==
        doctest::Approx(e.at("masked_forward_a1").get<double>()).epsilon(1e-12));
  CHECK(pair_loss(seeded, x.v, x.q, x.a1, x.a2, 1, false) ==
        doctest::Approx(e.at("pair_loss_label_1").get<double>()).epsilon(1e-12));
  CHECK(pair_loss(seeded, x.v, x.q, x.a1, x.a2, -1, false) ==
        doctest::Approx(e.at("pair_loss_label_minus_1").get<double>()).epsilon(1e-12));
}

TEST_CASE("forward: rejects mismatched dimensions") {
  const RewardNet net = RewardNet::initialize(kDims, 1);
  const std::vector<double> v(15), q(8), a(16);
  CHECK_THROWS_AS(net.forward(v, q, a), DimensionError);
}

TEST_CASE("forward: b2 shifts every score by the same constant") {
  Rng rng(4);
  RewardNet net = RewardNet::initialize(kDims, 9);
  const Draw x = draw(rng);
  const double before = net.forward(x.v, x.q, x.a1);
  net.b2() += 1.25;
  CHECK(net.forward(x.v, x.q, x.a1) == doctest::Approx(before + 1.25).epsilon(1e-14));
}

TEST_CASE("masked_forward: equals forward with zero vision and ignores v") {
  Rng rng(5);
  const RewardNet net = RewardNet::initialize(kDims, 2);
  const Draw x = draw(rng);
  const std::vector<double> zero(kDims.d_v, 0.0);
  CHECK(net.masked_forward(x.v, x.q, x.a1) == net.forward(zero, x.q, x.a1));
  const Draw y = draw(rng);
  CHECK(net.masked_forward(y.v, x.q, x.a1) == net.masked_forward(x.v, x.q, x.a1));

  RewardNet blind = net;
  for (std::size_t h = 0; h < kDims.hidden; ++h)
    for (std::size_t i = 0; i < kDims.d_v; ++i) blind.w1(h, i) = 0.0;
  CHECK(blind.masked_forward(x.v, x.q, x.a1) == blind.forward(x.v, x.q, x.a1));
}

TEST_CASE("initialize: same seed gives identical nets, uniform bounds, zero biases") {
  const RewardNet a = RewardNet::initialize(kDims, 17);
  const RewardNet b = RewardNet::initialize(kDims, 17);
  const RewardNet c = RewardNet::initialize(kDims, 18);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const double lim1 = 1.0 / std::sqrt(static_cast<double>(kDims.input_dim()));
  const double lim2 = 1.0 / std::sqrt(static_cast<double>(kDims.hidden));
  for (std::size_t h = 0; h < kDims.hidden; ++h) {
    CHECK(a.b1(h) == 0.0);
    CHECK(std::abs(a.w2(h)) <= lim2);
    for (std::size_t i = 0; i < kDims.input_dim(); ++i) CHECK(std::abs(a.w1(h, i)) <= lim1);
  }
  CHECK(a.b2() == 0.0);
}

TEST_CASE("pair_grad: closed-form losses") {
  Rng rng(6);
  const Draw x = draw(rng);
  const RewardNet zero = RewardNet::zeros(kDims);
  CHECK(pair_grad(zero, x.v, x.q, x.a1, x.a2, 1, false).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(bt_loss_from_margin(10.0) == doctest::Approx(4.539889921686464e-05).epsilon(1e-12));
  CHECK(bt_loss_from_margin(-800.0) == doctest::Approx(800.0));
  CHECK(std::isfinite(bt_loss_from_margin(800.0)));
}

TEST_CASE("pair_grad: label -1 swaps the roles of the answers") {
  Rng rng(7);
  const Draw x = draw(rng);
  const RewardNet net = RewardNet::initialize(kDims, 3);
  const PairGrad g1 = pair_grad(net, x.v, x.q, x.a1, x.a2, 1, false);
  const PairGrad g2 = pair_grad(net, x.v, x.q, x.a2, x.a1, -1, false);
  CHECK(g1.loss == g2.loss);
  CHECK(bit_identical(g1.grad, g2.grad));
  CHECK(g1.grad.back() == 0.0);  // b2 cancels in the margin
}

TEST_CASE("fd_check: zero net, random nets and a planted fault") {
  Rng rng(8);
  const Draw x = draw(rng);
  CHECK(fd_check(RewardNet::zeros(kDims), x.v, x.q, x.a1, x.a2, 1, false) <= 1e-7);

  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const RewardNet net = RewardNet::initialize(kDims, 1000 + static_cast<std::uint64_t>(t));
    const Draw s = draw(rng);
    worst = std::max(worst, fd_check(net, s.v, s.q, s.a1, s.a2, t % 2 ? 1 : -1, t % 3 == 0));
  }
  CHECK(worst <= 1e-5);

  const RewardNet net = RewardNet::initialize(kDims, 77);
  PairGrad g = pair_grad(net, x.v, x.q, x.a1, x.a2, 1, false);
  std::size_t big = 0;
  for (std::size_t i = 1; i < g.grad.size(); ++i)
    if (std::abs(g.grad[i]) > std::abs(g.grad[big])) big = i;
  g.grad[big] *= 2.0;
  CHECK(fd_check(net, x.v, x.q, x.a1, x.a2, 1, false, g.grad) > 1e-2);
}

TEST_CASE("pair_grad: masked gradient has zero vision columns") {
  Rng rng(9);
  const Draw x = draw(rng);
  const RewardNet net = RewardNet::initialize(kDims, 5);
  const PairGrad g = pair_grad(net, x.v, x.q, x.a1, x.a2, 1, true);
  for (std::size_t h = 0; h < kDims.hidden; ++h)
    for (std::size_t i = 0; i < kDims.d_v; ++i) CHECK(g.grad[h * kDims.input_dim() + i] == 0.0);
}

TEST_CASE("AdamW: zero gradient without decay leaves parameters unchanged") {
  AdamWConfig c;
  c.weight_decay = 0.0;
  c.total_steps = 10;
  AdamW opt(c, 3);
  std::vector<double> p = {1.0, -2.0, 0.5};
  const std::vector<double> g(3, 0.0);
  for (int i = 0; i < 10; ++i) opt.step(p, g);
  CHECK(p == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("AdamW: two steps match the hand-computed recursion") {
  AdamWConfig c;
  c.base_lr = 0.1;
  c.weight_decay = 0.01;
  c.total_steps = 2;
  c.schedule = LrSchedule::kConstant;
  AdamW opt(c, 1);
  std::vector<double> p = {0.5};
  const std::vector<double> g = {1.0};
  // m1 = 0.1, v1 = 0.001 -> m_hat = v_hat = 1; same after step 2.
  const double step = 0.1 / (1.0 + 1e-8);
  opt.step(p, g);
  const double x1 = 0.5 * (1.0 - 0.1 * 0.01) - step;
  CHECK(p[0] == doctest::Approx(x1).epsilon(1e-15));
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(x1 * (1.0 - 0.1 * 0.01) - step).epsilon(1e-15));
  CHECK(opt.first_moment()[0] == doctest::Approx(0.19));
  CHECK(opt.second_moment()[0] == doctest::Approx(0.001999));
  CHECK_THROWS_AS(opt.step(p, g), RunCompleteError);
}

TEST_CASE("AdamW: warmup then cosine decay") {
  AdamWConfig c;
  c.base_lr = 2e-3;
  c.warmup_ratio = 0.1;
  c.total_steps = 1000;
  const AdamW opt(c, 1);
  CHECK(opt.warmup_steps() == 100);
  CHECK(opt.lr_at(0) == 0.0);
  CHECK(opt.lr_at(50) == doctest::Approx(1e-3));
  CHECK(opt.lr_at(100) == doctest::Approx(2e-3));
  CHECK(opt.lr_at(550) == doctest::Approx(1e-3));
  CHECK(opt.lr_at(1000) == doctest::Approx(0.0).epsilon(1e-15));
  for (int s = 101; s <= 1000; ++s) CHECK(opt.lr_at(s) <= opt.lr_at(s - 1));
}

TEST_CASE("AdamW: rejects shape mismatch") {
  AdamWConfig c;
  c.total_steps = 5;
  AdamW opt(c, 2);
  std::vector<double> p(3), g(3);
  CHECK_THROWS_AS(opt.step(p, g), DimensionError);
}

TEST_CASE("serialization: round trip is bit exact") {
  const RewardNet net = RewardNet::initialize(kDims, 123);
  const RewardNet back = net_from_json(nlohmann::json::parse(net_to_json(net).dump()));
  CHECK(back == net);
  CHECK(bit_identical(back.params(), net.params()));
  CHECK(back.seed() == 123);
}

TEST_CASE("seeds: derivation is stable and name-separated") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, std::uint64_t{0}) != derive_seed(1, std::uint64_t{1}));
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(hex_digest("").size() == 16);
  Rng a(5), b(5);
  for (int i = 0; i < 10; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("vectors: helpers") {
  const std::vector<double> a = {3.0, 4.0};
  CHECK(norm(a) == 5.0);
  CHECK(dot(a, a) == 25.0);
  CHECK(all_finite(a));
  const std::vector<double> bad = {1.0, std::nan("")};
  CHECK_FALSE(all_finite(bad));
  const std::vector<double> pz = {0.0}, nz = {-0.0};
  CHECK_FALSE(bit_identical(pz, nz));
  Mat64 m(2, 2, 1.0);
  CHECK(m.frobenius_norm() == 2.0);
}
