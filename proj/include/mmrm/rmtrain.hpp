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

// Reward-model training in three modes:
//   standard        mean Bradley-Terry loss on full multimodal inputs
//   text_only       the same loss with the vision block zeroed
//   shortcut_aware  two identically initialized branches; the auxiliary
//                   branch learns from proxy-masked inputs and its per-sample
//                   loss, relative to the primary's, reweights the primary
//                   loss through the shortcut-failure coefficient (SFC).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mmrm/envgen.hpp"
#include "mmrm/numcore.hpp"

namespace mmrm {

enum class TrainMode { kStandard, kTextOnly, kShortcutAware };
std::string_view to_string(TrainMode mode);
TrainMode mode_from_string(std::string_view name);

// ---------------------------------------------------------------------------
// Shortcut proxies
// ---------------------------------------------------------------------------

enum class ProxyKind { kIdentity, kTextOnly, kImageOnly, kCustom };

/// Which feature blocks the auxiliary branch sees. kCustom multiplies the
/// [v; q; a] layout elementwise by `custom`, applied to both answers.
struct ProxyMask {
  ProxyKind kind = ProxyKind::kTextOnly;
  std::vector<double> custom;
};

ProxyMask proxy_from_string(std::string_view name);
std::string_view to_string(ProxyKind kind);

/// text_only zeroes v; image_only zeroes q and both answers; identity is a
/// no-op. Length fields follow the masked length coordinate.
PreferenceSample proxy_mask(const PreferenceSample& sample, const ProxyMask& mask,
                            const AnswerLayout& layout);

// ---------------------------------------------------------------------------
// Shortcut-failure coefficient
// ---------------------------------------------------------------------------

/// loss_t / (loss_mm + loss_t). Both losses are plain numbers here, so no
/// gradient can reach the branches that produced them.
double sfc(double loss_mm, double loss_t);

/// w_i = sfc_i / mean(sfc) over the batch.
std::vector<double> normalized_weights(std::span<const double> sfc_values);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  TrainMode mode = TrainMode::kStandard;
  double base_lr = 3e-3;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double weight_decay = 0.05;
  double warmup_ratio = 0.1;
  std::size_t hidden = 32;
  /// Initializes both branches; the shuffle stream derives from it.
  std::uint64_t seed = 0;
  bool sfc_normalized = false;
  ProxyMask proxy;
  /// Diagnostic: force every primary weight to this value.
  std::optional<double> weight_override;

  void validate() const;
};

nlohmann::json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& doc);

struct SampleRecord {
  double loss_mm = 0.0;
  double loss_t = 0.0;
  double sfc = 0.0;
  double weight = 0.0;
};

struct DualStep {
  std::vector<double> primary_grad;
  std::vector<double> aux_grad;
  std::vector<SampleRecord> records;
  double primary_objective = 0.0;  // mean of weight * loss_mm
  double aux_loss = 0.0;           // mean of loss_t
  double mean_sfc = 0.0;
};

struct WeightOptions {
  bool normalized = false;
  std::optional<double> override_value;
};

/// One shortcut-aware gradient evaluation. `samples` feed the primary branch
/// and `proxy_samples` (same order) feed the auxiliary branch.
DualStep weighted_grad_step(const RewardNet& primary, const RewardNet& aux,
                            std::span<const PreferenceSample> samples,
                            std::span<const PreferenceSample> proxy_samples,
                            std::span<const std::size_t> batch, const WeightOptions& options);

struct SfcProfile {
  double mean = 0.0;
  std::optional<double> mean_shortcut;     // oracle label true
  std::optional<double> mean_no_shortcut;  // oracle label false
};

/// SFC of every sample under the current branches, split by the generator's
/// shortcut oracle label.
SfcProfile sfc_profile(const RewardNet& primary, const RewardNet& aux, const Dataset& data,
                       const ProxyMask& proxy, const AnswerLayout& layout);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  std::optional<SfcProfile> sfc;  // shortcut_aware only
};

struct TrainRun {
  TrainConfig config;
  std::string dataset_fingerprint;
  std::vector<double> loss_trace;
  std::vector<double> sfc_trace;  // shortcut_aware only
  std::vector<EpochRecord> epochs;
  double initial_loss = 0.0;  // full-dataset mean loss before step 0
  double final_loss = 0.0;
  RewardNet primary;
  std::optional<RewardNet> auxiliary;

  std::size_t steps() const { return loss_trace.size(); }
};

/// Throws ConfigError on invalid configs, empty datasets or a feature
/// dimension mismatch.
TrainRun train(const TrainConfig& config, const Dataset& data, const AnswerLayout& layout);

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size);

/// Directory layout: config.json, trace.csv (step,loss,mean_sfc),
/// primary.json and, for shortcut_aware runs, auxiliary.json.
void save_run(const TrainRun& run, const std::filesystem::path& dir);
TrainRun load_run(const std::filesystem::path& dir);

}  // namespace mmrm
