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

#include "mmrm/rmeval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "mmrm/errors.hpp"

namespace mmrm {

double accuracy_from_scores(std::span<const kernels::ScoredPair> scores) {
  if (scores.empty()) throw DomainError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (const auto& p : scores) correct += p.chosen > p.rejected ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double accuracy(const RewardNet& net, const Dataset& data, bool mask_vision) {
  return accuracy_from_scores(kernels::omp::score_pairs(net, data.samples, mask_vision));
}

// ---------------------------------------------------------------------------

double GenMatrix::at(std::string_view train_env, std::string_view test_env) const {
  const auto find = [&](std::string_view id) {
    const auto it = std::find(envs.begin(), envs.end(), id);
    if (it == envs.end()) throw ConfigError("environment '" + std::string(id) + "' not in matrix");
    return static_cast<std::size_t>(it - envs.begin());
  };
  return acc[find(train_env)][find(test_env)];
}

double GenMatrix::mean_diagonal() const {
  double s = 0.0;
  for (std::size_t i = 0; i < envs.size(); ++i) s += acc[i][i];
  return s / static_cast<double>(envs.size());
}

double GenMatrix::mean_off_diagonal() const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < envs.size(); ++i) {
    for (std::size_t j = 0; j < envs.size(); ++j) {
      if (i == j) continue;
      s += acc[i][j];
      ++n;
    }
  }
  return n == 0 ? 0.0 : s / static_cast<double>(n);
}

GenMatrix gen_matrix(const std::string& mode, const std::vector<std::string>& envs,
                     const std::map<std::string, RewardNet>& models,
                     const std::map<std::string, Dataset>& tests, bool mask_vision) {
  GenMatrix m;
  m.mode = mode;
  m.envs = envs;
  m.acc.assign(envs.size(), std::vector<double>(envs.size(), 0.0));
  for (std::size_t i = 0; i < envs.size(); ++i) {
    const auto model = models.find(envs[i]);
    if (model == models.end()) {
      throw ConfigError("no " + mode + " model trained on environment '" + envs[i] + "'");
    }
    for (std::size_t j = 0; j < envs.size(); ++j) {
      const auto test = tests.find(envs[j]);
      if (test == tests.end()) throw ConfigError("no test set for environment '" + envs[j] + "'");
      m.acc[i][j] = accuracy(model->second, test->second, mask_vision);
    }
  }
  return m;
}

namespace {

std::string fmt(double x, const char* spec = "%.17g") {
  char buf[40];
  std::snprintf(buf, sizeof(buf), spec, x);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json();
}

}  // namespace

std::string matrix_to_csv(const GenMatrix& m) {
  std::ostringstream out;
  out << "train\\test";
  for (const auto& e : m.envs) out << ',' << e;
  out << '\n';
  for (std::size_t i = 0; i < m.envs.size(); ++i) {
    out << m.envs[i];
    for (std::size_t j = 0; j < m.envs.size(); ++j) out << ',' << fmt(m.acc[i][j], "%.6f");
    out << '\n';
  }
  return out.str();
}

nlohmann::json matrix_to_json(const GenMatrix& m) {
  return {{"mode", m.mode},
          {"envs", m.envs},
          {"acc", m.acc},
          {"mean_iid", m.mean_diagonal()},
          {"mean_ood", m.mean_off_diagonal()},
          {"gap", m.gap()}};
}

GenMatrix matrix_from_json(const nlohmann::json& doc) {
  GenMatrix m;
  m.mode = doc.at("mode").get<std::string>();
  m.envs = doc.at("envs").get<std::vector<std::string>>();
  m.acc = doc.at("acc").get<std::vector<std::vector<double>>>();
  return m;
}

// ---------------------------------------------------------------------------

ShortcutSplit shortcut_split(const RewardNet& text_only_net, const Dataset& test_set) {
  const auto scores = kernels::omp::score_pairs(text_only_net, test_set.samples, true);
  ShortcutSplit split;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    (scores[i].chosen > scores[i].rejected ? split.success : split.fail).push_back(i);
  }
  return split;
}

SFDReport sfd_or_missing(const RewardNet& mm_net, const Dataset& test_set,
                         const ShortcutSplit& split, const std::string& train_env) {
  if (split.success.size() + split.fail.size() != test_set.size()) {
    throw DomainError("shortcut split does not partition the test set");
  }
  const auto scores = kernels::omp::score_pairs(mm_net, test_set.samples, false);
  auto subset_acc = [&](const std::vector<std::size_t>& idx) -> std::optional<double> {
    if (idx.empty()) return std::nullopt;
    std::size_t correct = 0;
    for (std::size_t i : idx) correct += scores[i].chosen > scores[i].rejected ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(idx.size());
  };
  SFDReport r;
  r.train_env = train_env;
  r.test_env = test_set.env_id;
  r.n_success = split.success.size();
  r.n_fail = split.fail.size();
  r.acc_on_success = subset_acc(split.success);
  r.acc_on_fail = subset_acc(split.fail);
  if (r.acc_on_success && r.acc_on_fail) r.sfd = *r.acc_on_success - *r.acc_on_fail;
  return r;
}

SFDReport sfd(const RewardNet& mm_net, const Dataset& test_set, const ShortcutSplit& split,
              const std::string& train_env) {
  SFDReport r = sfd_or_missing(mm_net, test_set, split, train_env);
  if (!r.defined()) {
    throw UndefinedMetricError("SFD undefined: shortcut-success subset has " +
                               std::to_string(r.n_success) + " samples, shortcut-fail subset has " +
                               std::to_string(r.n_fail));
  }
  return r;
}

nlohmann::json sfd_to_json(const SFDReport& r) {
  return {{"train_env", r.train_env},
          {"test_env", r.test_env},
          {"n_success", r.n_success},
          {"n_fail", r.n_fail},
          {"acc_on_success", opt_json(r.acc_on_success)},
          {"acc_on_fail", opt_json(r.acc_on_fail)},
          {"sfd", opt_json(r.sfd)}};
}

// ---------------------------------------------------------------------------

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("pearson: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

BiasDiag score_correlation(const RewardNet& mm_net, const RewardNet& text_net,
                           const Dataset& test_set) {
  if (test_set.empty()) throw DomainError("score_correlation: empty test set");
  const auto mm = kernels::omp::score_pairs(mm_net, test_set.samples, false);
  const auto tx = kernels::omp::score_pairs(text_net, test_set.samples, true);
  std::vector<double> rm, rt, mm_margin, tx_margin;
  rm.reserve(2 * mm.size());
  rt.reserve(2 * mm.size());
  for (std::size_t i = 0; i < mm.size(); ++i) {
    rm.push_back(mm[i].chosen);
    rm.push_back(mm[i].rejected);
    rt.push_back(tx[i].chosen);
    rt.push_back(tx[i].rejected);
    mm_margin.push_back(mm[i].chosen - mm[i].rejected);
    tx_margin.push_back(tx[i].chosen - tx[i].rejected);
  }
  BiasDiag d;
  d.response_r = pearson(rm, rt);
  d.margin_r = pearson(mm_margin, tx_margin);
  return d;
}

nlohmann::json bias_to_json(const BiasDiag& d) {
  return {{"response_r", opt_json(d.response_r)},
          {"margin_r", opt_json(d.margin_r)},
          {"balanced_accuracy", opt_json(d.balanced_accuracy)}};
}

Dataset length_balanced_subset(const Dataset& test_set, std::uint64_t seed) {
  std::vector<std::size_t> longer, shorter;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& s = test_set.samples[i];
    if (s.chosen_length() > s.rejected_length()) {
      longer.push_back(i);
    } else if (s.chosen_length() < s.rejected_length()) {
      shorter.push_back(i);
    }
  }
  if (longer.empty() || shorter.empty()) {
    throw DomainError("length balancing needs both chosen-longer and rejected-longer pairs");
  }
  auto& big = longer.size() > shorter.size() ? longer : shorter;
  const std::size_t keep = std::min(longer.size(), shorter.size());
  Rng rng(seed);
  std::shuffle(big.begin(), big.end(), rng.engine());
  std::set<std::size_t> dropped(big.begin() + static_cast<std::ptrdiff_t>(keep), big.end());

  Dataset out;
  out.env_id = test_set.env_id;
  out.split = test_set.split;
  out.fingerprint = test_set.fingerprint + "/length_balanced";
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    if (!dropped.contains(i)) out.samples.push_back(test_set.samples[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------

SfcRhoTable sfc_rho_diagnostic(std::vector<SfcRhoRow> rows) {
  SfcRhoTable t;
  for (auto& r : rows) r.rho_proxy = 1.0 - r.beta;
  std::sort(rows.begin(), rows.end(), [](const SfcRhoRow& a, const SfcRhoRow& b) {
    return a.beta > b.beta || (a.beta == b.beta && a.env_id < b.env_id);
  });
  t.rows = std::move(rows);
  std::set<double> betas;
  for (const auto& r : t.rows) betas.insert(r.beta);
  if (betas.size() < 2) {
    t.skipped = true;
    t.notice = "SFC-rho diagnostic skipped: needs at least two distinct beta values";
    return t;
  }
  t.ordered = true;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (std::size_t j = 0; j < t.rows.size(); ++j) {
      if (t.rows[i].beta > t.rows[j].beta && !(t.rows[i].mean_sfc < t.rows[j].mean_sfc)) {
        t.ordered = false;
      }
    }
  }
  return t;
}

nlohmann::json sfc_rho_to_json(const SfcRhoTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"env_id", r.env_id}, {"beta", r.beta}, {"rho_proxy", r.rho_proxy},
                    {"mean_sfc", r.mean_sfc}});
  }
  return {{"rows", rows}, {"skipped", t.skipped}, {"notice", t.notice}, {"ordered", t.ordered}};
}

}  // namespace mmrm
