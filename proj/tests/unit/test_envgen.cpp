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
#include <filesystem>

#include "doctest.h"
#include "mmrm/envgen.hpp"
#include "mmrm/errors.hpp"
#include "mmrm/kernels.hpp"
#include "mmrm/rmeval.hpp"
#include "mmrm/rmtrain.hpp"

using namespace mmrm;

namespace {

std::vector<EnvironmentSpec> big_family(std::size_t n) {
  auto specs = default_family_specs();
  for (auto& s : specs) {
    s.n_train = n;
    s.n_test = n;
  }
  return specs;
}

// Picks the answer with the larger projection on u.
double projection_rule_accuracy(const Dataset& d, const Vec64& u) {
  std::size_t ok = 0;
  for (const auto& s : d.samples) {
    const double p1 = dot(s.a1, u), p2 = dot(s.a2, u);
    ok += ((p1 > p2 ? 1 : -1) == s.y) ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(d.size());
}

double fraction_chosen_longer(const Dataset& d) {
  std::size_t k = 0;
  for (const auto& s : d.samples) k += s.chosen_length() > s.rejected_length() ? 1 : 0;
  return static_cast<double>(k) / static_cast<double>(d.size());
}

}  // namespace

TEST_CASE("family: invariant matrices and shortcut directions") {
  const Family f = default_family(11);
  CHECK(f.vision_interaction().frobenius_norm() > 0.0);
  CHECK(f.vision_interaction().frobenius_norm() == doctest::Approx(1.0));
  CHECK(f.query_interaction().frobenius_norm() == doctest::Approx(f.options().query_scale));
  const Vec64& ua = f.shortcut_dir("A");
  const Vec64& ub = f.shortcut_dir("B");
  const Vec64& uc = f.shortcut_dir("C");
  for (const Vec64* u : {&ua, &ub, &uc}) CHECK(norm(*u) == doctest::Approx(1.0));
  CHECK(std::abs(dot(ua, ub)) < 1e-12);
  CHECK(dot(ub, uc) == doctest::Approx(-1.0));
  // Shortcuts live only in the marker block, so s* cannot see them.
  const auto& lay = f.options().layout;
  for (std::size_t j = 0; j < ua.size(); ++j) {
    if (j < lay.content_end || j >= lay.marker_end) CHECK(ua[j] == 0.0);
  }
}

TEST_CASE("family: construction errors") {
  auto one = default_family_specs();
  one.resize(1);
  CHECK_THROWS_AS(Family::make(1, one), GenerationError);
  auto bad = default_family_specs();
  bad[0].beta = 1.5;
  CHECK_THROWS_AS(Family::make(1, bad), GenerationError);
  auto order = default_family_specs();
  std::swap(order[0], order[1]);  // B now refers to A before A exists
  CHECK_THROWS_AS(Family::make(1, order), GenerationError);
  auto expl = default_family_specs();
  Vec64 d(16);
  d[0] = 1.0;  // content block
  expl[0].shortcut = ExplicitDirection{d};
  CHECK_THROWS_AS(Family::make(1, expl), GenerationError);
  CHECK_THROWS_AS(default_family(1).sample("Z", Split::kTrain), ConfigError);
}

TEST_CASE("sample: Bayes rule reaches 1 - eta in every environment") {
  const Family f = Family::make(5, big_family(10000));
  for (const auto& id : f.env_ids()) {
    const Dataset d = f.sample(id, Split::kTest);
    std::size_t ok = 0;
    for (const auto& s : d.samples) ok += bayes_label(f, s) == s.y ? 1 : 0;
    CHECK(std::abs(static_cast<double>(ok) / 1e4 - (1.0 - f.spec(id).eta)) <= 0.01);
  }
}

TEST_CASE("sample: shortcut oracle frequency follows beta") {
  auto specs = big_family(10000);
  specs[1].beta = 1.0;
  specs[2].beta = 0.0;
  const Family f = Family::make(6, specs);
  const auto frac = [](const Dataset& d) {
    std::size_t k = 0;
    for (const auto& s : d.samples) k += shortcut_oracle_label(s) ? 1 : 0;
    return static_cast<double>(k) / static_cast<double>(d.size());
  };
  CHECK(std::abs(frac(f.sample("A", Split::kTrain)) - 0.85) <= 0.01);
  CHECK(frac(f.sample("B", Split::kTrain)) == 1.0);
  CHECK(frac(f.sample("C", Split::kTrain)) == 0.0);
}

TEST_CASE("sample: shortcut locality of the projection rule") {
  const Family f = Family::make(7, big_family(10000));
  std::map<std::string, Dataset> test;
  for (const auto& id : f.env_ids()) test[id] = f.sample(id, Split::kTest);
  for (const auto& id : f.env_ids()) {
    CHECK(projection_rule_accuracy(test[id], f.shortcut_dir(id)) >= f.spec(id).beta - 0.02);
  }
  CHECK(projection_rule_accuracy(test["B"], f.shortcut_dir("A")) <= 0.55);  // orthogonal
  CHECK(projection_rule_accuracy(test["A"], f.shortcut_dir("B")) <= 0.55);
  CHECK(projection_rule_accuracy(test["C"], f.shortcut_dir("B")) <= 0.45);  // anti-correlated
  CHECK(projection_rule_accuracy(test["B"], f.shortcut_dir("C")) <= 0.45);
}

TEST_CASE("sample: near-deterministic shortcut is linearly separable") {
  auto specs = big_family(10000);
  specs[1].eta = 0.0;
  const Family f = Family::make(8, specs);
  CHECK(projection_rule_accuracy(f.sample("B", Split::kTest), f.shortcut_dir("B")) >= 0.99);
}

TEST_CASE("sample: length bias matches every split") {
  const Family f = default_family(9);
  const std::map<std::string, double> target = {{"A", 0.598}, {"B", 0.315}, {"C", 0.678}};
  for (const auto& id : f.env_ids()) {
    for (Split sp : {Split::kTrain, Split::kTest}) {
      const Dataset d = f.sample(id, sp);
      CHECK(std::abs(fraction_chosen_longer(d) - target.at(id)) <= 0.02);
      for (const auto& s : d.samples) validate_sample(s, f.options());
    }
  }
}

TEST_CASE("sample: deterministic and independent of thread count") {
  const Family f = default_family(10);
  const int before = kernels::max_threads();
  kernels::set_threads(1);
  const Dataset a = f.sample("A", Split::kTrain);
  kernels::set_threads(4);
  const Dataset b = f.sample("A", Split::kTrain);
  kernels::set_threads(before);
  REQUIRE(a.size() == b.size());
  CHECK(a.fingerprint == b.fingerprint);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(bit_identical(a.samples[i].a1, b.samples[i].a1));
    CHECK(a.samples[i].y == b.samples[i].y);
  }
  CHECK(default_family(10).fingerprint("A", Split::kTrain) == a.fingerprint);
  CHECK(default_family(12).fingerprint("A", Split::kTrain) != a.fingerprint);
}

TEST_CASE("sample: adding an environment leaves the others untouched") {
  auto specs = default_family_specs();
  const Family base = Family::make(13, specs);
  specs.push_back(EnvironmentSpec{"D", 4, 100, 100, 0.0, 1.0, FreshDirection{}, 0.05, 0.5});
  const Family wider = Family::make(13, specs);
  const Dataset a = base.sample("A", Split::kTest), b = wider.sample("A", Split::kTest);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(bit_identical(a.samples[i].v, b.samples[i].v));
  CHECK(base.shortcut_dir("C") == wider.shortcut_dir("C"));
}

TEST_CASE("subsample: floor count, seeded, order preserved") {
  const Dataset d = default_family(14).sample("A", Split::kTrain);
  const Dataset s = subsample(d, 0.25, 99);
  CHECK(s.size() == 2000);
  CHECK(subsample(d, 0.3333, 1).size() == static_cast<std::size_t>(std::floor(0.3333 * 8000)));
  const Dataset s2 = subsample(d, 0.25, 99);
  CHECK(s.fingerprint == s2.fingerprint);
  // Order preserved: positions of kept samples increase.
  std::size_t j = 0;
  for (const auto& x : s.samples) {
    while (j < d.size() && !bit_identical(d.samples[j].v, x.v)) ++j;
    REQUIRE(j < d.size());
  }
  CHECK_THROWS_AS(subsample(d, 0.0, 1), ConfigError);
}

TEST_CASE("jsonl: round trip is exact") {
  const Family f = default_family(15);
  Dataset d = f.sample("C", Split::kTest);
  const auto path = std::filesystem::temp_directory_path() / "mmrm_envgen_roundtrip.jsonl";
  write_jsonl(d, path);
  const Dataset back = read_jsonl(path, f.options().layout);
  std::filesystem::remove(path);
  REQUIRE(back.size() == d.size());
  CHECK(back.env_id == "C");
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(bit_identical(back.samples[i].a2, d.samples[i].a2));
    CHECK(back.samples[i].shortcut_applied == d.samples[i].shortcut_applied);
    CHECK(back.samples[i].length1 == d.samples[i].length1);
  }
}

TEST_CASE("spec json: round trip keeps derivation rules") {
  for (const auto& s : default_family_specs()) {
    const EnvironmentSpec back = spec_from_json(spec_to_json(s));
    CHECK(spec_to_json(back) == spec_to_json(s));
  }
  const FamilyOptions o;
  CHECK(options_to_json(options_from_json(options_to_json(o))) == options_to_json(o));
}

TEST_CASE("sample: without a shortcut, text alone is near chance") {
  auto specs = default_family_specs();
  specs.push_back(EnvironmentSpec{"D", 4, 8000, 2000, 0.0, 1.0, FreshDirection{}, 0.05, 0.5});
  const Family f = Family::make(16, specs);
  TrainConfig c;
  c.mode = TrainMode::kTextOnly;
  c.seed = 3;
  const TrainRun run = train(c, f.sample("D", Split::kTrain), f.options().layout);
  CHECK(accuracy(run.primary, f.sample("D", Split::kTest), true) <= 0.55);
}
