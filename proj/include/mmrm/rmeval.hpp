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

// Evaluation: pairwise accuracy, generalization matrices, shortcut splits
// and shortcut-failure degradation (SFD), score correlation, length-balanced
// subsets and the SFC ordering diagnostic.
//
// Ties always count as errors: a pair is correct only when the chosen answer
// scores strictly higher.

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmrm/envgen.hpp"
#include "mmrm/kernels.hpp"
#include "mmrm/numcore.hpp"

namespace mmrm {

double accuracy(const RewardNet& net, const Dataset& data, bool mask_vision);
double accuracy_from_scores(std::span<const kernels::ScoredPair> scores);

// ---------------------------------------------------------------------------

struct GenMatrix {
  std::string mode;
  std::vector<std::string> envs;
  std::vector<std::vector<double>> acc;  // acc[train][test]

  double at(std::string_view train_env, std::string_view test_env) const;
  double mean_diagonal() const;
  double mean_off_diagonal() const;
  double gap() const { return mean_diagonal() - mean_off_diagonal(); }
};

/// Fills every cell. text_only matrices evaluate with the vision block
/// masked. Throws ConfigError when a model or test set is missing.
GenMatrix gen_matrix(const std::string& mode, const std::vector<std::string>& envs,
                     const std::map<std::string, RewardNet>& models,
                     const std::map<std::string, Dataset>& tests, bool mask_vision);

std::string matrix_to_csv(const GenMatrix& m);
nlohmann::json matrix_to_json(const GenMatrix& m);
GenMatrix matrix_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------

struct ShortcutSplit {
  std::vector<std::size_t> success;  // text-only net strictly correct
  std::vector<std::size_t> fail;     // wrong or tied
};

ShortcutSplit shortcut_split(const RewardNet& text_only_net, const Dataset& test_set);

struct SFDReport {
  std::string train_env;
  std::string test_env;
  std::size_t n_success = 0;
  std::size_t n_fail = 0;
  std::optional<double> acc_on_success;
  std::optional<double> acc_on_fail;
  std::optional<double> sfd;

  bool defined() const { return sfd.has_value(); }
};

/// Throws UndefinedMetricError when either subset is empty.
SFDReport sfd(const RewardNet& mm_net, const Dataset& test_set, const ShortcutSplit& split,
              const std::string& train_env = {});
/// Same, but empty subsets yield a report with missing values and counts.
SFDReport sfd_or_missing(const RewardNet& mm_net, const Dataset& test_set,
                         const ShortcutSplit& split, const std::string& train_env = {});

nlohmann::json sfd_to_json(const SFDReport& r);

// ---------------------------------------------------------------------------

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct BiasDiag {
  std::optional<double> response_r;  // over 2 scores per sample
  std::optional<double> margin_r;    // over chosen-minus-rejected margins
  std::optional<double> balanced_accuracy;
};

/// mm_net is scored on full inputs, text_net on vision-masked inputs.
BiasDiag score_correlation(const RewardNet& mm_net, const RewardNet& text_net,
                           const Dataset& test_set);

nlohmann::json bias_to_json(const BiasDiag& d);

/// Downsamples the larger of {chosen longer, rejected longer} to the size of
/// the smaller; equal-length pairs are kept. Original order is preserved.
/// Throws DomainError if either side is empty.
Dataset length_balanced_subset(const Dataset& test_set, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct SfcRhoRow {
  std::string env_id;
  double beta = 0.0;
  double rho_proxy = 0.0;  // 1 - beta
  double mean_sfc = 0.0;
};

struct SfcRhoTable {
  std::vector<SfcRhoRow> rows;  // sorted by beta descending
  bool skipped = false;
  std::string notice;
  /// Lower beta strictly implies higher mean SFC across every row pair.
  bool ordered = false;
};

SfcRhoTable sfc_rho_diagnostic(std::vector<SfcRhoRow> rows);
nlohmann::json sfc_rho_to_json(const SfcRhoTable& t);

}  // namespace mmrm
