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

// Synthetic multimodal preference environments.
//
// Every environment of a family scores answer quality with the same function
//   s*(v, q, a) = v^T W* a + q^T M* a,
// which only reads the content block of an answer. Each environment then
// plants its own text-only shortcut: with probability beta the chosen answer
// is shifted by alpha * u_e inside the low-noise marker block. The last
// answer coordinate is a nonnegative "length" that is longer on the chosen
// side for exactly round(length_bias * n) pairs of every split.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mmrm/numcore.hpp"

namespace mmrm {

enum class Split { kTrain, kTest };
std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

struct PreferenceSample {
  Vec64 v;
  Vec64 q;
  Vec64 a1;
  Vec64 a2;
  int y = 1;  // 1: a1 chosen, -1: a2 chosen
  bool shortcut_applied = false;
  double length1 = 0.0;
  double length2 = 0.0;

  const Vec64& chosen() const { return y == 1 ? a1 : a2; }
  const Vec64& rejected() const { return y == 1 ? a2 : a1; }
  double chosen_length() const { return y == 1 ? length1 : length2; }
  double rejected_length() const { return y == 1 ? length2 : length1; }
};

/// Partition of the answer vector.
struct AnswerLayout {
  std::size_t content_end = 10;   // [0, content_end) feeds s*
  std::size_t marker_end = 15;    // [content_end, marker_end) hosts shortcuts
  std::size_t length_index = 15;  // designated length coordinate

  friend bool operator==(const AnswerLayout&, const AnswerLayout&) = default;
};

struct FreshDirection {};
struct ExplicitDirection {
  Vec64 dir;
};
struct OrthogonalTo {
  std::string env_id;
};
struct NegatedOf {
  std::string env_id;
};
using ShortcutRule = std::variant<FreshDirection, ExplicitDirection, OrthogonalTo, NegatedOf>;

struct EnvironmentSpec {
  std::string env_id;
  std::uint64_t seed = 0;
  std::size_t n_train = 8000;
  std::size_t n_test = 1000;
  double beta = 0.0;   // probability the shortcut is planted on the chosen answer
  double alpha = 1.0;  // shortcut magnitude
  ShortcutRule shortcut = FreshDirection{};
  double eta = 0.05;          // label flip probability
  double length_bias = 0.5;   // fraction of pairs whose chosen answer is longer
};

struct FamilyOptions {
  RewardDims dims{16, 8, 16, 32};
  AnswerLayout layout;
  /// Standard deviation of marker-block coordinates.
  double marker_noise = 0.5;
  /// Frobenius norm of M*; W* is normalized to 1.
  double query_scale = 0.15;
  /// Rank of W*; 0 means full rank.
  std::size_t vision_rank = 2;
  /// Gap added to the longer answer's length coordinate.
  double length_offset = 0.5;
};

struct Dataset {
  std::string env_id;
  Split split = Split::kTrain;
  std::vector<PreferenceSample> samples;
  std::string fingerprint;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

class Family {
 public:
  /// Draws W* and M* from family_seed and resolves every shortcut direction.
  /// Throws GenerationError for fewer than two environments or invalid specs.
  static Family make(std::uint64_t family_seed, std::vector<EnvironmentSpec> specs,
                     FamilyOptions options = {});

  std::uint64_t seed() const { return seed_; }
  const FamilyOptions& options() const { return options_; }
  const RewardDims& dims() const { return options_.dims; }
  const Mat64& vision_interaction() const { return w_star_; }
  const Mat64& query_interaction() const { return m_star_; }
  const std::vector<EnvironmentSpec>& specs() const { return specs_; }
  const EnvironmentSpec& spec(std::string_view env_id) const;
  const Vec64& shortcut_dir(std::string_view env_id) const;
  std::vector<std::string> env_ids() const;

  /// s*(v, q, a).
  double quality(std::span<const double> v, std::span<const double> q,
                 std::span<const double> a) const;
  /// Standard deviation of s* for standard-normal inputs.
  double quality_scale() const;

  Dataset sample(std::string_view env_id, Split split) const;
  std::string fingerprint(std::string_view env_id, Split split) const;

  /// Everything needed to audit a generated dataset: options, specs with
  /// resolved directions, and the invariant matrices.
  nlohmann::json manifest() const;

 private:
  std::size_t index_of(std::string_view env_id) const;

  std::uint64_t seed_ = 0;
  FamilyOptions options_;
  std::vector<EnvironmentSpec> specs_;
  std::vector<Vec64> directions_;
  Mat64 w_star_;
  Mat64 m_star_;
};

/// Environments A, B and C: B's shortcut is orthogonal to A's and C's is the
/// negation of B's, so B-trained shortcuts fail on A and invert on C.
std::vector<EnvironmentSpec> default_family_specs();
Family default_family(std::uint64_t family_seed);

/// True iff the planted shortcut was applied to the chosen answer.
inline bool shortcut_oracle_label(const PreferenceSample& s) { return s.shortcut_applied; }

/// Sign of the s* margin as a label; ignores label noise.
int bayes_label(const Family& family, const PreferenceSample& s);

/// Seeded selection of floor(fraction * n) samples without replacement,
/// preserving the original order.
Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed);

/// Checks the PreferenceSample invariants against a layout.
void validate_sample(const PreferenceSample& s, const FamilyOptions& options);

nlohmann::json options_to_json(const FamilyOptions& options);
FamilyOptions options_from_json(const nlohmann::json& doc);

nlohmann::json spec_to_json(const EnvironmentSpec& spec);
EnvironmentSpec spec_from_json(const nlohmann::json& doc);

nlohmann::json sample_to_json(const PreferenceSample& s, std::string_view env_id, Split split);
PreferenceSample sample_from_json(const nlohmann::json& doc, const AnswerLayout& layout);

/// One record per line: {env_id, split, v, q, a1, a2, y, shortcut_applied}.
void write_jsonl(const Dataset& data, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path, const AnswerLayout& layout);

}  // namespace mmrm
