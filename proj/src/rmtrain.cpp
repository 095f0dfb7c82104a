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

#include "mmrm/rmtrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mmrm/errors.hpp"
#include "mmrm/kernels.hpp"

namespace mmrm {

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kStandard:
      return "standard";
    case TrainMode::kTextOnly:
      return "text_only";
    case TrainMode::kShortcutAware:
      return "shortcut_aware";
  }
  return "unknown";
}

TrainMode mode_from_string(std::string_view name) {
  if (name == "standard") return TrainMode::kStandard;
  if (name == "text_only") return TrainMode::kTextOnly;
  if (name == "shortcut_aware") return TrainMode::kShortcutAware;
  throw ConfigError("unknown training mode '" + std::string(name) + "'");
}

std::string_view to_string(ProxyKind kind) {
  switch (kind) {
    case ProxyKind::kIdentity:
      return "identity";
    case ProxyKind::kTextOnly:
      return "text_only";
    case ProxyKind::kImageOnly:
      return "image_only";
    case ProxyKind::kCustom:
      return "custom";
  }
  return "unknown";
}

ProxyMask proxy_from_string(std::string_view name) {
  if (name == "identity") return {ProxyKind::kIdentity, {}};
  if (name == "text_only") return {ProxyKind::kTextOnly, {}};
  if (name == "image_only") return {ProxyKind::kImageOnly, {}};
  if (name == "custom") throw ConfigError("custom proxy masks need an explicit mask vector");
  throw ConfigError("unknown proxy kind '" + std::string(name) + "'");
}

PreferenceSample proxy_mask(const PreferenceSample& sample, const ProxyMask& mask,
                            const AnswerLayout& layout) {
  PreferenceSample out = sample;
  auto zero = [](Vec64& x) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.0;
  };
  switch (mask.kind) {
    case ProxyKind::kIdentity:
      return out;
    case ProxyKind::kTextOnly:
      zero(out.v);
      break;
    case ProxyKind::kImageOnly:
      zero(out.q);
      zero(out.a1);
      zero(out.a2);
      break;
    case ProxyKind::kCustom: {
      const std::size_t dv = out.v.size();
      const std::size_t dq = out.q.size();
      const std::size_t da = out.a1.size();
      if (mask.custom.size() != dv + dq + da) {
        throw ConfigError("custom proxy mask length " + std::to_string(mask.custom.size()) +
                          " does not match the input layout " + std::to_string(dv + dq + da));
      }
      for (std::size_t i = 0; i < dv; ++i) out.v[i] *= mask.custom[i];
      for (std::size_t i = 0; i < dq; ++i) out.q[i] *= mask.custom[dv + i];
      for (std::size_t i = 0; i < da; ++i) {
        out.a1[i] *= mask.custom[dv + dq + i];
        out.a2[i] *= mask.custom[dv + dq + i];
      }
      break;
    }
  }
  out.length1 = out.a1[layout.length_index];
  out.length2 = out.a2[layout.length_index];
  return out;
}

double sfc(double loss_mm, double loss_t) {
  if (!(loss_mm > 0.0) || !(loss_t > 0.0) || !std::isfinite(loss_mm) || !std::isfinite(loss_t)) {
    throw DomainError("sfc needs finite, strictly positive losses");
  }
  return loss_t / (loss_mm + loss_t);
}

std::vector<double> normalized_weights(std::span<const double> sfc_values) {
  if (sfc_values.empty()) throw DomainError("normalized_weights: empty batch");
  double sum = 0.0;
  for (double s : sfc_values) sum += s;
  const double mean = sum / static_cast<double>(sfc_values.size());
  std::vector<double> out(sfc_values.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sfc_values[i] / mean;
  return out;
}

// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (hidden < 1) throw ConfigError("hidden must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must lie in [0, 1)");
  if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (proxy.kind == ProxyKind::kCustom && proxy.custom.empty()) {
    throw ConfigError("custom proxy mask is empty");
  }
}

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json proxy = {{"kind", to_string(c.proxy.kind)}};
  if (c.proxy.kind == ProxyKind::kCustom) proxy["mask"] = c.proxy.custom;
  nlohmann::json doc = {{"mode", to_string(c.mode)},
                        {"base_lr", c.base_lr},
                        {"epochs", c.epochs},
                        {"batch_size", c.batch_size},
                        {"weight_decay", c.weight_decay},
                        {"warmup_ratio", c.warmup_ratio},
                        {"hidden", c.hidden},
                        {"seed", c.seed},
                        {"sfc_normalized", c.sfc_normalized},
                        {"proxy", proxy}};
  doc["weight_override"] = c.weight_override ? nlohmann::json(*c.weight_override) : nlohmann::json();
  return doc;
}

TrainConfig config_from_json(const nlohmann::json& doc) {
  try {
    TrainConfig c;
    c.mode = mode_from_string(doc.value("mode", std::string("standard")));
    c.base_lr = doc.value("base_lr", c.base_lr);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.weight_decay = doc.value("weight_decay", c.weight_decay);
    c.warmup_ratio = doc.value("warmup_ratio", c.warmup_ratio);
    c.hidden = doc.value("hidden", c.hidden);
    c.seed = doc.value("seed", c.seed);
    c.sfc_normalized = doc.value("sfc_normalized", c.sfc_normalized);
    if (doc.contains("proxy")) {
      const auto& p = doc.at("proxy");
      const std::string kind = p.at("kind").get<std::string>();
      if (kind == "custom") {
        c.proxy = {ProxyKind::kCustom, p.at("mask").get<std::vector<double>>()};
      } else {
        c.proxy = proxy_from_string(kind);
      }
    }
    if (doc.contains("weight_override") && !doc.at("weight_override").is_null()) {
      c.weight_override = doc.at("weight_override").get<double>();
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

namespace {

double weighted_average(std::span<const double> values, std::span<const double> weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) s += weights[i] * values[i];
  return s / static_cast<double>(values.size());
}

double mean_of(std::span<const double> values) {
  double s = 0.0;
  for (double x : values) s += x;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

std::vector<PreferenceSample> mask_all(std::span<const PreferenceSample> samples,
                                       const ProxyMask& proxy, const AnswerLayout& layout) {
  std::vector<PreferenceSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(proxy_mask(s, proxy, layout));
  return out;
}

RewardDims dims_of(const Dataset& data, std::size_t hidden) {
  const PreferenceSample& s = data.samples.front();
  RewardDims d{s.v.size(), s.q.size(), s.a1.size(), hidden};
  for (const auto& x : data.samples) {
    if (x.v.size() != d.d_v || x.q.size() != d.d_q || x.a1.size() != d.d_a || x.a2.size() != d.d_a) {
      throw ConfigError("dataset '" + data.env_id + "' mixes feature dimensions");
    }
  }
  return d;
}

}  // namespace

DualStep weighted_grad_step(const RewardNet& primary, const RewardNet& aux,
                            std::span<const PreferenceSample> samples,
                            std::span<const PreferenceSample> proxy_samples,
                            std::span<const std::size_t> batch, const WeightOptions& options) {
  if (batch.empty()) throw DimensionError("weighted_grad_step: empty batch");
  if (samples.size() != proxy_samples.size()) {
    throw DimensionError("weighted_grad_step: proxy samples must align with samples");
  }
  const auto gp = kernels::omp::pair_grads(primary, samples, batch, false);
  const auto ga = kernels::omp::pair_grads(aux, proxy_samples, batch, false);

  const std::size_t n = batch.size();
  std::vector<double> sfc_values(n), loss_mm(n), loss_t(n);
  for (std::size_t k = 0; k < n; ++k) {
    loss_mm[k] = gp[k].loss;
    loss_t[k] = ga[k].loss;
    sfc_values[k] = sfc(loss_mm[k], loss_t[k]);
  }
  std::vector<double> weights;
  if (options.override_value) {
    weights.assign(n, *options.override_value);
  } else if (options.normalized) {
    weights = normalized_weights(sfc_values);
  } else {
    weights = sfc_values;
  }
  const std::vector<double> ones(n, 1.0);

  DualStep out;
  out.primary_grad = kernels::omp::weighted_mean(gp, weights);
  out.aux_grad = kernels::omp::weighted_mean(ga, ones);
  out.primary_objective = weighted_average(loss_mm, weights);
  out.aux_loss = weighted_average(loss_t, ones);
  out.mean_sfc = mean_of(sfc_values);
  out.records.resize(n);
  for (std::size_t k = 0; k < n; ++k) out.records[k] = {loss_mm[k], loss_t[k], sfc_values[k], weights[k]};
  return out;
}

SfcProfile sfc_profile(const RewardNet& primary, const RewardNet& aux, const Dataset& data,
                       const ProxyMask& proxy, const AnswerLayout& layout) {
  if (data.empty()) throw DomainError("sfc_profile: empty dataset");
  const auto masked = mask_all(data.samples, proxy, layout);
  const auto lm = kernels::omp::pair_losses(primary, data.samples, false);
  const auto lt = kernels::omp::pair_losses(aux, masked, false);
  double all = 0.0, with = 0.0, without = 0.0;
  std::size_t n_with = 0, n_without = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double w = sfc(lm[i], lt[i]);
    all += w;
    if (shortcut_oracle_label(data.samples[i])) {
      with += w;
      ++n_with;
    } else {
      without += w;
      ++n_without;
    }
  }
  SfcProfile p;
  p.mean = all / static_cast<double>(data.size());
  if (n_with > 0) p.mean_shortcut = with / static_cast<double>(n_with);
  if (n_without > 0) p.mean_no_shortcut = without / static_cast<double>(n_without);
  return p;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

TrainRun train(const TrainConfig& config, const Dataset& data, const AnswerLayout& layout) {
  config.validate();
  if (data.empty()) throw ConfigError("cannot train on an empty dataset");
  const RewardDims dims = dims_of(data, config.hidden);
  if (layout.length_index >= dims.d_a) {
    throw ConfigError("answer layout does not match the dataset's answer dimension");
  }

  const std::size_t n = data.size();
  const std::size_t spe = steps_per_epoch(n, config.batch_size);
  AdamWConfig opt_cfg;
  opt_cfg.base_lr = config.base_lr;
  opt_cfg.weight_decay = config.weight_decay;
  opt_cfg.warmup_ratio = config.warmup_ratio;
  opt_cfg.total_steps = static_cast<std::int64_t>(spe * config.epochs);

  TrainRun run;
  run.config = config;
  run.dataset_fingerprint = data.fingerprint;
  run.primary = RewardNet::initialize(dims, config.seed);
  AdamW opt_primary(opt_cfg, run.primary.num_params());

  const bool dual = config.mode == TrainMode::kShortcutAware;
  const bool text_only = config.mode == TrainMode::kTextOnly;
  std::optional<AdamW> opt_aux;
  std::vector<PreferenceSample> proxy_samples;
  if (dual) {
    run.auxiliary = run.primary;
    opt_aux.emplace(opt_cfg, run.primary.num_params());
    proxy_samples = mask_all(data.samples, config.proxy, layout);
  }
  const std::span<const PreferenceSample> samples(data.samples);
  WeightOptions wopts{config.sfc_normalized, config.weight_override};

  auto dataset_loss = [&](const RewardNet& net) {
    return mean_of(kernels::omp::pair_losses(net, samples, text_only));
  };
  run.initial_loss = dataset_loss(run.primary);

  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(n);
  run.loss_trace.reserve(spe * config.epochs);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < spe; ++b) {
      const std::size_t lo = b * config.batch_size;
      const std::size_t hi = std::min(n, lo + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + lo, hi - lo);
      double step_loss = 0.0;
      if (dual) {
        const DualStep step =
            weighted_grad_step(run.primary, *run.auxiliary, samples, proxy_samples, batch, wopts);
        opt_primary.step(run.primary.params(), step.primary_grad);
        opt_aux->step(run.auxiliary->params(), step.aux_grad);
        step_loss = step.primary_objective;
        run.sfc_trace.push_back(step.mean_sfc);
      } else {
        const auto grads = kernels::omp::pair_grads(run.primary, samples, batch, text_only);
        const std::vector<double> ones(grads.size(), 1.0);
        std::vector<double> losses(grads.size());
        for (std::size_t k = 0; k < grads.size(); ++k) losses[k] = grads[k].loss;
        opt_primary.step(run.primary.params(), kernels::omp::weighted_mean(grads, ones));
        step_loss = weighted_average(losses, ones);
      }
      if (!std::isfinite(step_loss)) throw DomainError("training loss became non-finite");
      run.loss_trace.push_back(step_loss);
      epoch_loss += step_loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = epoch_loss / static_cast<double>(spe);
    if (dual) rec.sfc = sfc_profile(run.primary, *run.auxiliary, data, config.proxy, layout);
    run.epochs.push_back(rec);
  }
  run.final_loss = dataset_loss(run.primary);
  return run;
}

// ---------------------------------------------------------------------------

namespace {

std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json();
}

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("missing artifact " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

}  // namespace

void save_run(const TrainRun& run, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());

  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : run.epochs) {
    nlohmann::json j = {{"epoch", e.epoch}, {"mean_loss", e.mean_loss}};
    if (e.sfc) {
      j["sfc_mean"] = e.sfc->mean;
      j["sfc_shortcut"] = opt_json(e.sfc->mean_shortcut);
      j["sfc_no_shortcut"] = opt_json(e.sfc->mean_no_shortcut);
    }
    epochs.push_back(std::move(j));
  }
  const nlohmann::json doc = {{"config", config_to_json(run.config)},
                              {"dataset_fingerprint", run.dataset_fingerprint},
                              {"steps", run.steps()},
                              {"initial_loss", run.initial_loss},
                              {"final_loss", run.final_loss},
                              {"epochs", epochs}};
  write_text(dir / "config.json", doc.dump(2) + "\n");

  std::ostringstream csv;
  csv << "step,loss,mean_sfc\n";
  for (std::size_t i = 0; i < run.loss_trace.size(); ++i) {
    csv << i << ',' << fmt17(run.loss_trace[i]) << ',';
    if (i < run.sfc_trace.size()) csv << fmt17(run.sfc_trace[i]);
    csv << '\n';
  }
  write_text(dir / "trace.csv", csv.str());
  write_text(dir / "primary.json", net_to_json(run.primary).dump() + "\n");
  if (run.auxiliary) {
    write_text(dir / "auxiliary.json", net_to_json(*run.auxiliary).dump() + "\n");
  } else {
    std::filesystem::remove(dir / "auxiliary.json", ec);
  }
}

TrainRun load_run(const std::filesystem::path& dir) {
  const auto doc = read_json_file(dir / "config.json");
  TrainRun run;
  try {
    run.config = config_from_json(doc.at("config"));
    run.dataset_fingerprint = doc.at("dataset_fingerprint").get<std::string>();
    run.initial_loss = doc.at("initial_loss").get<double>();
    run.final_loss = doc.at("final_loss").get<double>();
    for (const auto& e : doc.at("epochs")) {
      EpochRecord rec;
      rec.epoch = e.at("epoch").get<std::size_t>();
      rec.mean_loss = e.at("mean_loss").get<double>();
      if (e.contains("sfc_mean")) {
        rec.sfc = SfcProfile{e.at("sfc_mean").get<double>(), opt_from(e.at("sfc_shortcut")),
                             opt_from(e.at("sfc_no_shortcut"))};
      }
      run.epochs.push_back(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed run config in " + dir.string() + ": " + e.what());
  }

  std::ifstream csv(dir / "trace.csv");
  if (!csv) throw IoError("missing artifact " + (dir / "trace.csv").string());
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw IoError("malformed trace row in " + dir.string());
    }
    run.loss_trace.push_back(std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
    if (c2 + 1 < line.size()) run.sfc_trace.push_back(std::stod(line.substr(c2 + 1)));
  }
  run.primary = net_from_json(read_json_file(dir / "primary.json"));
  if (run.config.mode == TrainMode::kShortcutAware) {
    run.auxiliary = net_from_json(read_json_file(dir / "auxiliary.json"));
  }
  return run;
}

}  // namespace mmrm
