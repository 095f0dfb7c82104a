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

#include "mmrm/envgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>

#include "mmrm/errors.hpp"

namespace mmrm {

std::string_view to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

namespace {

std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

void check_unit_interval(double x, const char* what, const std::string& env) {
  if (!(x >= 0.0 && x <= 1.0)) {
    throw GenerationError("environment '" + env + "': " + what + " must lie in [0, 1]");
  }
}

void validate_spec(const EnvironmentSpec& s) {
  if (s.env_id.empty()) throw GenerationError("environment id must be nonempty");
  check_unit_interval(s.beta, "beta", s.env_id);
  check_unit_interval(s.eta, "eta", s.env_id);
  check_unit_interval(s.length_bias, "length_bias", s.env_id);
  if (!(s.alpha >= 0.0) || !std::isfinite(s.alpha)) {
    throw GenerationError("environment '" + s.env_id + "': alpha must be finite and >= 0");
  }
  if (s.n_train == 0 || s.n_test == 0) {
    throw GenerationError("environment '" + s.env_id + "': split sizes must be positive");
  }
}

void validate_options(const FamilyOptions& o) {
  const AnswerLayout& l = o.layout;
  if (l.content_end == 0 || l.content_end >= l.marker_end || l.marker_end > o.dims.d_a ||
      l.length_index >= o.dims.d_a ||
      (l.length_index >= l.content_end && l.length_index < l.marker_end)) {
    throw GenerationError("answer layout does not fit the answer dimension");
  }
  if (!(o.marker_noise >= 0.0) || !(o.query_scale >= 0.0) || !(o.length_offset >= 0.0)) {
    throw GenerationError("family noise/scale options must be nonnegative");
  }
}

// Random unit vector supported on the marker block, orthogonal to `against`.
Vec64 marker_direction(Rng& rng, const FamilyOptions& o, const std::vector<const Vec64*>& against) {
  Vec64 u(o.dims.d_a);
  for (std::size_t j = o.layout.content_end; j < o.layout.marker_end; ++j) u[j] = rng.normal();
  for (const Vec64* w : against) {
    const double c = dot(u, *w);
    for (std::size_t j = 0; j < u.size(); ++j) u[j] -= c * (*w)[j];
  }
  const double n = norm(u);
  if (n < 1e-12) throw GenerationError("marker block too small for the requested directions");
  for (std::size_t j = 0; j < u.size(); ++j) u[j] /= n;
  return u;
}

Mat64 draw_interaction(Rng& rng, std::size_t rows, const FamilyOptions& o, std::size_t rank,
                       double target_norm) {
  const std::size_t cols = o.dims.d_a;
  const std::size_t content = o.layout.content_end;
  Mat64 m(rows, cols);
  if (rank == 0) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < content; ++c) m(r, c) = rng.normal();
  } else {
    for (std::size_t k = 0; k < rank; ++k) {
      std::vector<double> left(rows), right(content);
      for (auto& x : left) x = rng.normal();
      for (auto& x : right) x = rng.normal();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < content; ++c) m(r, c) += left[r] * right[c];
    }
  }
  const double n = m.frobenius_norm();
  if (n > 0.0) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) m(r, c) *= target_norm / n;
  }
  return m;
}

std::uint64_t split_seed(std::uint64_t family_seed, const EnvironmentSpec& spec, Split split) {
  return derive_seed(derive_seed(splitmix64(family_seed) ^ spec.seed, "env/" + spec.env_id),
                     to_string(split));
}

}  // namespace

// ---------------------------------------------------------------------------

Family Family::make(std::uint64_t family_seed, std::vector<EnvironmentSpec> specs,
                    FamilyOptions options) {
  if (specs.size() < 2) throw GenerationError("a family needs at least two environments");
  validate_options(options);
  std::set<std::string> ids;
  for (const auto& s : specs) {
    validate_spec(s);
    if (!ids.insert(s.env_id).second) {
      throw GenerationError("duplicate environment id '" + s.env_id + "'");
    }
  }

  Family f;
  f.seed_ = family_seed;
  f.options_ = options;
  f.specs_ = std::move(specs);

  Rng inv_rng(derive_seed(family_seed, "invariant"));
  f.w_star_ = draw_interaction(inv_rng, options.dims.d_v, options, options.vision_rank, 1.0);
  f.m_star_ = draw_interaction(inv_rng, options.dims.d_q, options, 0, options.query_scale);

  f.directions_.reserve(f.specs_.size());
  for (std::size_t i = 0; i < f.specs_.size(); ++i) {
    const EnvironmentSpec& s = f.specs_[i];
    Rng rng(derive_seed(family_seed, "shortcut/" + s.env_id));
    auto earlier = [&](const std::string& id) -> const Vec64& {
      for (std::size_t k = 0; k < i; ++k) {
        if (f.specs_[k].env_id == id) return f.directions_[k];
      }
      throw GenerationError("environment '" + s.env_id + "' derives its shortcut from '" + id +
                            "', which must be listed earlier in the family");
    };
    Vec64 u = std::visit(
        [&](const auto& rule) -> Vec64 {
          using T = std::decay_t<decltype(rule)>;
          if constexpr (std::is_same_v<T, FreshDirection>) {
            return marker_direction(rng, options, {});
          } else if constexpr (std::is_same_v<T, OrthogonalTo>) {
            return marker_direction(rng, options, {&earlier(rule.env_id)});
          } else if constexpr (std::is_same_v<T, NegatedOf>) {
            Vec64 out = earlier(rule.env_id);
            for (std::size_t j = 0; j < out.size(); ++j) out[j] = -out[j];
            return out;
          } else {
            const Vec64& d = rule.dir;
            if (d.size() != options.dims.d_a) {
              throw GenerationError("explicit shortcut direction has the wrong dimension");
            }
            if (std::abs(norm(d) - 1.0) > 1e-9) {
              throw GenerationError("explicit shortcut direction must have unit norm");
            }
            for (std::size_t j = 0; j < d.size(); ++j) {
              const bool in_marker = j >= options.layout.content_end && j < options.layout.marker_end;
              if (!in_marker && d[j] != 0.0) {
                throw GenerationError("explicit shortcut direction must lie in the marker block");
              }
            }
            return d;
          }
        },
        s.shortcut);
    f.directions_.push_back(std::move(u));
  }
  return f;
}

std::size_t Family::index_of(std::string_view env_id) const {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (specs_[i].env_id == env_id) return i;
  }
  throw ConfigError("unknown environment '" + std::string(env_id) + "'");
}

const EnvironmentSpec& Family::spec(std::string_view env_id) const {
  return specs_[index_of(env_id)];
}

const Vec64& Family::shortcut_dir(std::string_view env_id) const {
  return directions_[index_of(env_id)];
}

std::vector<std::string> Family::env_ids() const {
  std::vector<std::string> out;
  for (const auto& s : specs_) out.push_back(s.env_id);
  return out;
}

double Family::quality(std::span<const double> v, std::span<const double> q,
                       std::span<const double> a) const {
  const RewardDims& d = options_.dims;
  if (v.size() != d.d_v || q.size() != d.d_q || a.size() != d.d_a) {
    throw DimensionError("quality: feature dimensions do not match the family");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < d.d_v; ++i) s += v[i] * dot(w_star_.row(i), a);
  for (std::size_t i = 0; i < d.d_q; ++i) s += q[i] * dot(m_star_.row(i), a);
  return s;
}

double Family::quality_scale() const {
  const double w = w_star_.frobenius_norm();
  const double m = m_star_.frobenius_norm();
  return std::sqrt(w * w + m * m);
}

std::string Family::fingerprint(std::string_view env_id, Split split) const {
  nlohmann::json doc = {{"family_seed", seed_},
                        {"options", options_to_json(options_)},
                        {"spec", spec_to_json(spec(env_id))},
                        {"split", to_string(split)}};
  return hex64(fnv1a64(doc.dump()));
}

Dataset Family::sample(std::string_view env_id, Split split) const {
  const std::size_t idx = index_of(env_id);
  const EnvironmentSpec& spec = specs_[idx];
  const Vec64& u = directions_[idx];
  const RewardDims& d = options_.dims;
  const AnswerLayout& lay = options_.layout;
  const std::size_t n = split == Split::kTrain ? spec.n_train : spec.n_test;
  const std::uint64_t base = split_seed(seed_, spec, split);

  // Exactly round(length_bias * n) pairs get the longer chosen answer.
  std::vector<char> chosen_longer(n, 0);
  {
    const auto k = static_cast<std::size_t>(std::llround(spec.length_bias * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(base, "length"));
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t i = 0; i < std::min(k, n); ++i) chosen_longer[order[i]] = 1;
  }

  Dataset out;
  out.env_id = spec.env_id;
  out.split = split;
  out.fingerprint = fingerprint(env_id, split);
  out.samples.resize(n);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    Rng rng(derive_seed(base, static_cast<std::uint64_t>(i)));
    PreferenceSample s;
    s.v = Vec64(d.d_v);
    s.q = Vec64(d.d_q);
    for (std::size_t j = 0; j < d.d_v; ++j) s.v[j] = rng.normal();
    for (std::size_t j = 0; j < d.d_q; ++j) s.q[j] = rng.normal();
    double base_len[2];
    Vec64* answers[2] = {&s.a1, &s.a2};
    for (int k = 0; k < 2; ++k) {
      Vec64 a(d.d_a);
      for (std::size_t j = 0; j < lay.content_end; ++j) a[j] = rng.normal();
      for (std::size_t j = lay.content_end; j < lay.marker_end; ++j) {
        a[j] = options_.marker_noise * rng.normal();
      }
      base_len[k] = std::abs(rng.normal());
      *answers[k] = std::move(a);
    }
    const bool flip = rng.bernoulli(spec.eta);
    const bool plant = rng.bernoulli(spec.beta);

    const double s1 = quality(s.v, s.q, s.a1);
    const double s2 = quality(s.v, s.q, s.a2);
    s.y = s1 >= s2 ? 1 : -1;
    if (flip) s.y = -s.y;

    Vec64& chosen = s.y == 1 ? s.a1 : s.a2;
    Vec64& rejected = s.y == 1 ? s.a2 : s.a1;
    if (plant) {
      for (std::size_t j = 0; j < d.d_a; ++j) chosen[j] += spec.alpha * u[j];
      s.shortcut_applied = true;
    }
    const double longer = std::max(base_len[0], base_len[1]) + options_.length_offset;
    const double shorter = std::min(base_len[0], base_len[1]);
    chosen[lay.length_index] = chosen_longer[i] ? longer : shorter;
    rejected[lay.length_index] = chosen_longer[i] ? shorter : longer;
    s.length1 = s.a1[lay.length_index];
    s.length2 = s.a2[lay.length_index];
    out.samples[i] = std::move(s);
  }
  return out;
}

nlohmann::json Family::manifest() const {
  nlohmann::json envs = nlohmann::json::array();
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    nlohmann::json e = spec_to_json(specs_[i]);
    e["resolved_direction"] = directions_[i].values();
    envs.push_back(std::move(e));
  }
  return {{"family_seed", seed_},
          {"options", options_to_json(options_)},
          {"environments", envs},
          {"W_star", w_star_.flat()},
          {"M_star", m_star_.flat()},
          {"M_star_norm", m_star_.frobenius_norm()}};
}

// ---------------------------------------------------------------------------

std::vector<EnvironmentSpec> default_family_specs() {
  EnvironmentSpec a{"A", 1, 8000, 1000, 0.85, 1.0, FreshDirection{}, 0.05, 0.598};
  EnvironmentSpec b{"B", 2, 8000, 1000, 0.99, 2.0, OrthogonalTo{"A"}, 0.05, 0.315};
  EnvironmentSpec c{"C", 3, 8000, 1000, 0.85, 1.0, NegatedOf{"B"}, 0.05, 0.678};
  return {a, b, c};
}

Family default_family(std::uint64_t family_seed) {
  return Family::make(family_seed, default_family_specs());
}

int bayes_label(const Family& family, const PreferenceSample& s) {
  return family.quality(s.v, s.q, s.a1) >= family.quality(s.v, s.q, s.a2) ? 1 : -1;
}

Dataset subsample(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample fraction must lie in (0, 1]");
  }
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  order.resize(k);
  std::sort(order.begin(), order.end());
  Dataset out;
  out.env_id = data.env_id;
  out.split = data.split;
  char frac[32];
  std::snprintf(frac, sizeof(frac), "%.6g", fraction);
  out.fingerprint = hex64(fnv1a64(data.fingerprint + "/subsample/" + frac + "/" + std::to_string(seed)));
  out.samples.reserve(k);
  for (std::size_t i : order) out.samples.push_back(data.samples[i]);
  return out;
}

void validate_sample(const PreferenceSample& s, const FamilyOptions& options) {
  const RewardDims& d = options.dims;
  if (s.v.size() != d.d_v || s.q.size() != d.d_q || s.a1.size() != d.d_a || s.a2.size() != d.d_a) {
    throw DimensionError("sample dimensions do not match the family");
  }
  if (s.y != 1 && s.y != -1) throw DomainError("sample label must be 1 or -1");
  if (!all_finite(s.v) || !all_finite(s.q) || !all_finite(s.a1) || !all_finite(s.a2)) {
    throw DomainError("sample contains non-finite features");
  }
  const std::size_t li = options.layout.length_index;
  if (s.length1 != s.a1[li] || s.length2 != s.a2[li] || s.length1 < 0.0 || s.length2 < 0.0) {
    throw DomainError("sample lengths must equal the nonnegative length coordinate");
  }
}

// ---------------------------------------------------------------------------

nlohmann::json options_to_json(const FamilyOptions& o) {
  return {{"d_v", o.dims.d_v},
          {"d_q", o.dims.d_q},
          {"d_a", o.dims.d_a},
          {"content_end", o.layout.content_end},
          {"marker_end", o.layout.marker_end},
          {"length_index", o.layout.length_index},
          {"marker_noise", o.marker_noise},
          {"query_scale", o.query_scale},
          {"vision_rank", o.vision_rank},
          {"length_offset", o.length_offset}};
}

FamilyOptions options_from_json(const nlohmann::json& doc) {
  FamilyOptions o;
  try {
    o.dims.d_v = doc.value("d_v", o.dims.d_v);
    o.dims.d_q = doc.value("d_q", o.dims.d_q);
    o.dims.d_a = doc.value("d_a", o.dims.d_a);
    o.layout.content_end = doc.value("content_end", o.layout.content_end);
    o.layout.marker_end = doc.value("marker_end", o.layout.marker_end);
    o.layout.length_index = doc.value("length_index", o.layout.length_index);
    o.marker_noise = doc.value("marker_noise", o.marker_noise);
    o.query_scale = doc.value("query_scale", o.query_scale);
    o.vision_rank = doc.value("vision_rank", o.vision_rank);
    o.length_offset = doc.value("length_offset", o.length_offset);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed generator options: ") + e.what());
  }
  validate_options(o);
  return o;
}

nlohmann::json spec_to_json(const EnvironmentSpec& spec) {
  nlohmann::json rule = std::visit(
      [](const auto& r) -> nlohmann::json {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, FreshDirection>) {
          return {{"kind", "fresh"}};
        } else if constexpr (std::is_same_v<T, ExplicitDirection>) {
          return {{"kind", "explicit"}, {"dir", r.dir.values()}};
        } else if constexpr (std::is_same_v<T, OrthogonalTo>) {
          return {{"kind", "orthogonal_to"}, {"env", r.env_id}};
        } else {
          return {{"kind", "negated_of"}, {"env", r.env_id}};
        }
      },
      spec.shortcut);
  return {{"env_id", spec.env_id}, {"seed", spec.seed},   {"n_train", spec.n_train},
          {"n_test", spec.n_test}, {"beta", spec.beta},   {"alpha", spec.alpha},
          {"shortcut", rule},      {"eta", spec.eta},     {"length_bias", spec.length_bias}};
}

EnvironmentSpec spec_from_json(const nlohmann::json& doc) {
  try {
    EnvironmentSpec s;
    s.env_id = doc.at("env_id").get<std::string>();
    s.seed = doc.value("seed", std::uint64_t{0});
    s.n_train = doc.value("n_train", s.n_train);
    s.n_test = doc.value("n_test", s.n_test);
    s.beta = doc.at("beta").get<double>();
    s.alpha = doc.value("alpha", s.alpha);
    s.eta = doc.value("eta", s.eta);
    s.length_bias = doc.value("length_bias", s.length_bias);
    if (doc.contains("shortcut")) {
      const auto& r = doc.at("shortcut");
      const std::string kind = r.at("kind").get<std::string>();
      if (kind == "fresh") {
        s.shortcut = FreshDirection{};
      } else if (kind == "explicit") {
        s.shortcut = ExplicitDirection{Vec64(r.at("dir").get<std::vector<double>>())};
      } else if (kind == "orthogonal_to") {
        s.shortcut = OrthogonalTo{r.at("env").get<std::string>()};
      } else if (kind == "negated_of") {
        s.shortcut = NegatedOf{r.at("env").get<std::string>()};
      } else {
        throw ConfigError("unknown shortcut rule '" + kind + "'");
      }
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed environment spec: ") + e.what());
  }
}

nlohmann::json sample_to_json(const PreferenceSample& s, std::string_view env_id, Split split) {
  return {{"env_id", env_id},       {"split", to_string(split)}, {"v", s.v.values()},
          {"q", s.q.values()},      {"a1", s.a1.values()},       {"a2", s.a2.values()},
          {"y", s.y},               {"shortcut_applied", s.shortcut_applied}};
}

PreferenceSample sample_from_json(const nlohmann::json& doc, const AnswerLayout& layout) {
  PreferenceSample s;
  s.v = Vec64(doc.at("v").get<std::vector<double>>());
  s.q = Vec64(doc.at("q").get<std::vector<double>>());
  s.a1 = Vec64(doc.at("a1").get<std::vector<double>>());
  s.a2 = Vec64(doc.at("a2").get<std::vector<double>>());
  s.y = doc.at("y").get<int>();
  s.shortcut_applied = doc.at("shortcut_applied").get<bool>();
  if (layout.length_index >= s.a1.size() || layout.length_index >= s.a2.size()) {
    throw DimensionError("answer vector shorter than the length coordinate");
  }
  s.length1 = s.a1[layout.length_index];
  s.length2 = s.a2[layout.length_index];
  return s;
}

void write_jsonl(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  for (const auto& s : data.samples) out << sample_to_json(s, data.env_id, data.split).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path, const AnswerLayout& layout) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read dataset file " + path.string());
  Dataset data;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto doc = nlohmann::json::parse(line);
      const auto env = doc.at("env_id").get<std::string>();
      const auto split = split_from_string(doc.at("split").get<std::string>());
      if (data.samples.empty()) {
        data.env_id = env;
        data.split = split;
      } else if (env != data.env_id || split != data.split) {
        throw IoError("mixed environments/splits in one dataset file");
      }
      data.samples.push_back(sample_from_json(doc, layout));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return data;
}

}  // namespace mmrm
