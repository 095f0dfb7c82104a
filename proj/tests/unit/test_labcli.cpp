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


#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mmrm/errors.hpp"
#include "mmrm/labcli.hpp"
#include "mmrm/svg.hpp"

using namespace mmrm;
using namespace mmrm::lab;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c = default_config();
  for (auto* list : {&c.envs, &c.diagnostic_envs}) {
    for (auto& e : *list) {
      e.n_train = 600;
      e.n_test = 200;
    }
  }
  for (auto& [_, t] : c.train) t.epochs = 2;
  c.bon_settings.pools_per_env = 3;
  c.bon_settings.pool.candidates = 8;
  c.out_dir = out;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mmrm_labcli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("config: json round trip, hash, unknown keys") {
  const ExperimentConfig c = default_config();
  const auto j = experiment_to_json(c);
  CHECK(experiment_to_json(experiment_from_json(j)) == j);
  CHECK(config_hash(experiment_from_json(j)) == config_hash(c));

  ExperimentConfig moved = c;
  moved.out_dir = "elsewhere";
  moved.jobs = 3;
  CHECK(config_hash(moved) == config_hash(c));
  ExperimentConfig reseeded = c;
  reseeded.master_seed = 1;
  CHECK(config_hash(reseeded) != config_hash(c));

  CHECK_THROWS_AS(experiment_from_json({{"learning_rate", 1}}), ConfigError);
  CHECK_THROWS_AS(experiment_from_json({{"family", "mystery"}}), ConfigError);
  CHECK_THROWS_AS(experiment_from_json({{"family", "custom"}}), ConfigError);
  CHECK_THROWS_AS(experiment_from_json({{"modes", {"fancy"}}}), ConfigError);
  CHECK_THROWS_AS(experiment_from_json(nlohmann::json::array()), ConfigError);

  const auto partial = experiment_from_json({{"train", {{"standard", {{"epochs", 3}}}}}, {"master_seed", 9}});
  CHECK(partial.train.at("standard").epochs == 3);
  CHECK(partial.train.at("standard").base_lr == c.train.at("standard").base_lr);
  CHECK(partial.train.at("text_only").epochs == c.train.at("text_only").epochs);
  CHECK(partial.master_seed == 9);

  const fs::path dir = scratch("cfg");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "absent.json"), LabError);
  fs::remove_all(dir);
}

TEST_CASE("seeds: shared init across modes, distinct across envs") {
  const ExperimentConfig c = default_config();
  CHECK(init_seed(c, "A") == derive_seed(c.master_seed, "init/A"));
  CHECK(init_seed(c, "A") != init_seed(c, "B"));
  CHECK(subsample_seed(c, "A", 0.25) != subsample_seed(c, "A", 0.5));
  CHECK(fraction_tag(0.25) == "0.25");
  const Family f = build_family(c, false);
  CHECK(f.env_ids() == std::vector<std::string>{"A", "B", "C"});
  CHECK(build_family(c, true).env_ids().size() == 4);
  CHECK(f.shortcut_dir("B") == build_family(c, true).shortcut_dir("B"));
}

TEST_CASE("manifest: round trip and artifact verification") {
  const fs::path dir = scratch("manifest");
  fs::create_directories(dir / "reports");
  std::ofstream(dir / "reports" / "x.csv") << "a,b\n";
  RunManifest m;
  m.config_hash = "abc";
  m.datasets["A_train"] = "00ff";
  m.steps["report/matrix"] = StepRecord{"in", {{"reports/x.csv", file_hash(dir / "reports" / "x.csv")}}, 0.5};
  m.steps["train/standard/A"] = StepRecord{"in2", {{"runs/standard/A/primary.json", "1234"}}, 1.0};
  const RunManifest back = manifest_from_json(manifest_to_json(m));
  CHECK(back.config_hash == "abc");
  CHECK(back.steps.at("report/matrix").outputs == m.steps.at("report/matrix").outputs);
  CHECK(back.models() == std::vector<std::string>{"runs/standard/A/primary.json"});
  CHECK(back.reports() == std::vector<std::string>{"reports/x.csv"});

  const auto bad = verify_artifacts(m, dir);
  REQUIRE(bad.size() == 1);
  CHECK(bad[0].find("runs/standard/A/primary.json") != std::string::npos);
  std::ofstream(dir / "reports" / "x.csv") << "changed\n";
  CHECK(verify_artifacts(m, dir).size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("lock: exclusive while held, stale locks are taken over") {
  const fs::path dir = scratch("lock");
  fs::create_directories(dir);
  {
    DirLock held(dir);
    CHECK(fs::exists(dir / ".lock"));
    CHECK_THROWS_AS(DirLock{dir}, IoError);
  }
  CHECK_FALSE(fs::exists(dir / ".lock"));
  std::ofstream(dir / ".lock") << "2147483000\n";  // no such process
  { DirLock taken(dir); }
  fs::remove_all(dir);
}

TEST_CASE("svg: deterministic and escaped") {
  const GenMatrix m{"standard", {"A", "B"}, {{0.9, 0.4}, {0.5, 0.8}}};
  const std::string h = svg::heatmap(m, "acc <A&B>");
  CHECK(h.rfind("<svg", 0) == 0);
  CHECK(h == svg::heatmap(m, "acc <A&B>"));
  CHECK(h.find("acc &lt;A&amp;B&gt;") != std::string::npos);
  CHECK(h.find(">90.00<") != std::string::npos);
  const std::string l = svg::line_chart("bon", "N", "score", {{"s", {1, 2, 4}, {5.0, 5.5, 5.8}}}, true);
  CHECK(l.find("<path") != std::string::npos);
  CHECK(svg::escape("\"x\"") == "&quot;x&quot;");
}

TEST_CASE("pipeline: ordering, outputs, resume, missing artifacts") {
  const fs::path out = scratch("pipeline");
  const ExperimentConfig c = tiny_config(out);
  std::ostringstream log;
  CHECK_THROWS_AS(cmd_matrix(c, log), OrderingError);
  CHECK_FALSE(fs::exists(out / ".lock"));

  const ReportOutcome first = run_pipeline(c, log);
  CHECK(first.missing.empty());
  CHECK_FALSE(first.assertions.empty());
  for (const char* rel : {"config.json", "manifest.json", "report.json", "report.txt",
                          "data/family.json", "data/A_train.jsonl", "data/C_test.jsonl",
                          "reports/matrix_standard.csv", "reports/matrix_text_only.svg",
                          "reports/sfd.json", "reports/bias.json", "reports/sfc_rho.json",
                          "reports/length_balanced.json", "reports/subsample.json",
                          "reports/bon/summary.json", "runs/shortcut_aware/B/auxiliary.json"}) {
    CAPTURE(rel);
    CHECK(fs::exists(out / rel));
  }
  const auto before = tree(out / "reports");
  const std::string report = slurp(out / "report.json");
  const auto manifest = slurp(out / "manifest.json");

  std::ostringstream log2;
  const ReportOutcome second = run_pipeline(c, log2);
  CHECK(second.all_passed() == first.all_passed());
  CHECK(tree(out / "reports") == before);
  CHECK(slurp(out / "report.json") == report);
  // Nothing retrained: step records, including timings, are untouched.
  CHECK(manifest_from_json(nlohmann::json::parse(slurp(out / "manifest.json"))).steps.size() ==
        manifest_from_json(nlohmann::json::parse(manifest)).steps.size());
  CHECK(log.str().find("  train runs/") != std::string::npos);
  CHECK(log2.str().find("  train runs/") == std::string::npos);
  CHECK(log2.str().find("  reuse runs/") != std::string::npos);

  const fs::path other = scratch("pipeline_jobs");
  ExperimentConfig c2 = c;
  c2.out_dir = other;
  c2.jobs = 2;
  run_pipeline(c2, log2);
  CHECK(tree(other / "reports") == before);
  CHECK(slurp(other / "report.json") == report);

  fs::remove(out / "runs" / "standard" / "A" / "primary.json");
  const ReportOutcome broken = cmd_report(c, log2);
  CHECK_FALSE(broken.all_passed());
  bool named = false;
  for (const auto& m : broken.missing) named |= m.find("runs/standard/A/primary.json") != std::string::npos;
  CHECK(named);

  fs::remove_all(out);
  fs::remove_all(other);
}
