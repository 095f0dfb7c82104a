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

// mmrm-lab <verb> [flags]
//
// Exit codes: 0 success, 1 a report assertion failed, 2 usage or I/O error.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmrm/errors.hpp"
#include "mmrm/labcli.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kAssertion = 1;
constexpr int kUsage = 2;

std::vector<mmrm::TrainMode> parse_modes(const std::string& list) {
  std::vector<mmrm::TrainMode> modes;
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) modes.push_back(mmrm::mode_from_string(item));
  }
  if (modes.empty()) throw mmrm::ConfigError("--mode needs at least one mode");
  return modes;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal reward-model shortcut laboratory"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, out_dir, modes;
  std::uint64_t seed = 0;
  double fraction = 0.0;
  int jobs = 0;
  auto* o_config = app.add_option("--config", config_path, "Experiment config (JSON)");
  auto* o_seed = app.add_option("--seed", seed, "Master seed");
  auto* o_out = app.add_option("--out", out_dir, "Output directory (LAB_OUT overrides)");
  auto* o_mode = app.add_option("--mode", modes, "Comma-separated modes: standard,text_only,shortcut_aware");
  auto* o_sub = app.add_option("--subsample", fraction, "Training-set fraction for the subsample study");
  auto* o_jobs = app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  o_config->check(CLI::ExistingFile);

  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"gen", "Generate environment datasets"},
      {"train", "Train every model the experiment needs"},
      {"matrix", "Train and evaluate generalization matrices"},
      {"sfd", "Shortcut-failure degradation per o.o.d. cell"},
      {"bon", "Best-of-N curves on i.i.d. and o.o.d. pools"},
      {"report", "Check artifacts and assertions, write report.json"}};
  for (const auto& [name, help] : verbs) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    mmrm::lab::ExperimentConfig cfg =
        config_path.empty() ? mmrm::lab::default_config() : mmrm::lab::load_config(config_path);
    if (*o_seed) cfg.master_seed = seed;
    if (*o_out) cfg.out_dir = out_dir;
    if (const char* env = std::getenv("LAB_OUT"); env && *env) cfg.out_dir = env;
    if (*o_mode) cfg.modes = parse_modes(modes);
    if (*o_sub) {
      if (!(fraction > 0.0 && fraction <= 1.0)) throw mmrm::ConfigError("--subsample must lie in (0, 1]");
      cfg.subsample_fractions = {fraction};
    }
    if (*o_jobs) cfg.jobs = jobs;

    if (verb == "gen") mmrm::lab::cmd_gen(cfg, std::cout);
    else if (verb == "train") mmrm::lab::cmd_train(cfg, std::cout);
    else if (verb == "matrix") mmrm::lab::cmd_matrix(cfg, std::cout);
    else if (verb == "sfd") mmrm::lab::cmd_sfd(cfg, std::cout);
    else if (verb == "bon") mmrm::lab::cmd_bon(cfg, std::cout);
    else {
      const auto outcome = mmrm::lab::cmd_report(cfg, std::cout);
      if (!outcome.missing.empty()) {
        std::cerr << "error: " << outcome.missing.size() << " artifact(s) missing or modified\n";
        return kUsage;
      }
      return outcome.all_passed() ? kOk : kAssertion;
    }
    return kOk;
  } catch (const mmrm::LabError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
