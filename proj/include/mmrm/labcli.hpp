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

// Experiment orchestration behind the command-line verbs.
//
// Output directory layout:
//   config.json       resolved experiment config
//   manifest.json     config hash, step records with output hashes, timings
//   data/             family.json and <env>_<split>.jsonl (+ subsamples)
//   runs/             one save_run directory per (mode, env)
//   reports/          matrices, SFD, diagnostics, Best-of-N curves
//   report.json       consolidated acceptance report (+ report.txt)
//
// Every random stream derives from the master seed:
//   family      derive_seed(master, "family")
//   net init    derive_seed(master, "init/<env>")   shared by all modes
//   subsample   derive_seed(master, "subsample/<env>/<fraction>")
//   pools       derive_seed(master, "bon")

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmrm/bon.hpp"
#include "mmrm/envgen.hpp"
#include "mmrm/rmtrain.hpp"

namespace mmrm::lab {

struct BonSettings {
  std::size_t pools_per_env = 200;
  PoolOptions pool;
};

struct Thresholds {
  double text_iid_min = 0.85;
  double text_ood_max = 0.60;
  double text_cross_max = 0.55;    // text-only cell on an anti-correlated env
  double sfd_cross_min = 0.15;     // standard SFD on that same cell
  double ood_gain_min = 0.05;      // shortcut-aware over standard
  double iid_drop_max = 0.03;
};

struct ExperimentConfig {
  /// "default" or "custom"; custom families list their envs explicitly.
  std::string family = "default";
  std::vector<EnvironmentSpec> envs;
  /// Extra environments trained only for the SFC ordering diagnostic.
  std::vector<EnvironmentSpec> diagnostic_envs;
  FamilyOptions generator;
  std::map<std::string, TrainConfig> train;  // keyed by mode name
  std::vector<TrainMode> modes;
  bool matrix = true;
  bool sfd = true;
  bool bon = true;
  std::vector<double> subsample_fractions{0.25};
  /// Pair of envs whose text-only cell and standard SFD get the extra
  /// cross-shortcut checks; empty disables them.
  std::string cross_train = "B";
  std::string cross_test = "C";
  BonSettings bon_settings;
  Thresholds thresholds;
  std::filesystem::path out_dir = "lab_out";
  std::uint64_t master_seed = 2026;
  int jobs = 0;  // 0 keeps the OpenMP default
};

ExperimentConfig default_config();

/// Missing keys keep their defaults; unknown top-level keys are rejected.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);
nlohmann::json experiment_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Hash of the canonical (key-sorted) JSON form, excluding out_dir and jobs.
std::string config_hash(const ExperimentConfig& config);

Family build_family(const ExperimentConfig& config, bool with_diagnostics);

std::uint64_t init_seed(const ExperimentConfig& config, const std::string& env_id);
std::uint64_t subsample_seed(const ExperimentConfig& config, const std::string& env_id,
                             double fraction);
std::string fraction_tag(double fraction);

// ---------------------------------------------------------------------------

struct StepRecord {
  std::string inputs;
  std::map<std::string, std::string> outputs;  // relative path -> content hash
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::map<std::string, std::string> datasets;  // name -> fingerprint
  std::map<std::string, StepRecord> steps;

  std::vector<std::string> models() const;
  std::vector<std::string> reports() const;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& doc);

std::string file_hash(const std::filesystem::path& path);

/// Relative paths of recorded artifacts that are missing or whose content
/// hash no longer matches.
std::vector<std::string> verify_artifacts(const RunManifest& m, const std::filesystem::path& root);

/// Exclusive ownership of an output directory through a lock file holding
/// the owner's pid. A lock left by a dead process is taken over.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------

struct Assertion {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct ReportOutcome {
  std::vector<std::string> missing;
  std::vector<Assertion> assertions;
  bool all_passed() const;
};

/// Each command locks the output directory, resumes from manifest.json and
/// logs progress to `log`. Throws LabError subclasses on usage or I/O errors.
void cmd_gen(const ExperimentConfig& config, std::ostream& log);
void cmd_train(const ExperimentConfig& config, std::ostream& log);
void cmd_matrix(const ExperimentConfig& config, std::ostream& log);
void cmd_sfd(const ExperimentConfig& config, std::ostream& log);
void cmd_bon(const ExperimentConfig& config, std::ostream& log);
ReportOutcome cmd_report(const ExperimentConfig& config, std::ostream& log);

/// gen, matrix, sfd, bon and report in order.
ReportOutcome run_pipeline(const ExperimentConfig& config, std::ostream& log);

}  // namespace mmrm::lab
