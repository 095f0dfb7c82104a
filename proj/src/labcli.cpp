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

#include "mmrm/labcli.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <ostream>
#include <set>
#include <sstream>

#include "mmrm/errors.hpp"
#include "mmrm/kernels.hpp"
#include "mmrm/rmeval.hpp"
#include "mmrm/svg.hpp"

namespace mmrm::lab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<TrainMode> kAllModes = {TrainMode::kStandard, TrainMode::kTextOnly,
                                          TrainMode::kShortcutAware};

std::string fixed(double x, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, x);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("missing artifact " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

// Write to a sibling temp file, then rename, so a crash never leaves a
// truncated artifact behind.
void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    out << text;
    if (!out) throw IoError("write failed for " + p.string());
  }
  fs::rename(tmp, p, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_json(const fs::path& p, const json& doc) { write_text(p, doc.dump(2) + "\n"); }

std::vector<TrainMode> active_modes(const ExperimentConfig& c) {
  return c.modes.empty() ? kAllModes : c.modes;
}

bool has_mode(const ExperimentConfig& c, TrainMode m) {
  const auto modes = active_modes(c);
  return std::find(modes.begin(), modes.end(), m) != modes.end();
}

std::vector<std::string> env_ids(const ExperimentConfig& c) {
  std::vector<std::string> ids;
  for (const auto& e : c.envs) ids.push_back(e.env_id);
  return ids;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

class Lab {
 public:
  Lab(const ExperimentConfig& config, std::ostream& log)
      : cfg_(config), root_(config.out_dir), log_(log), lock_(prepare(config.out_dir)) {
    if (cfg_.jobs > 0) kernels::set_threads(cfg_.jobs);
    const fs::path mpath = root_ / "manifest.json";
    if (fs::exists(mpath)) manifest_ = manifest_from_json(read_json(mpath));
    manifest_.config_hash = config_hash(cfg_);
    write_json(root_ / "config.json", experiment_to_json(cfg_));
    save_manifest();
  }

  const ExperimentConfig& cfg() const { return cfg_; }
  const fs::path& root() const { return root_; }
  std::ostream& log() { return log_; }
  RunManifest& manifest() { return manifest_; }

  const Family& family() {
    if (!family_) family_ = build_family(cfg_, true);
    return *family_;
  }

  bool fresh(const std::string& key, const std::string& inputs) const {
    const auto it = manifest_.steps.find(key);
    if (it == manifest_.steps.end() || it->second.inputs != inputs) return false;
    for (const auto& [rel, hash] : it->second.outputs) {
      const fs::path p = root_ / rel;
      if (!fs::exists(p) || file_hash(p) != hash) return false;
    }
    return true;
  }

  void record(const std::string& key, const std::string& inputs,
              const std::vector<std::string>& outputs, double seconds) {
    StepRecord r;
    r.inputs = inputs;
    r.seconds = seconds;
    for (const auto& rel : outputs) r.outputs[rel] = file_hash(root_ / rel);
    manifest_.steps[key] = std::move(r);
    save_manifest();
  }

  void save_manifest() { write_json(root_ / "manifest.json", manifest_to_json(manifest_)); }

  // Datasets -----------------------------------------------------------------

  static std::string dataset_name(const std::string& env, Split split) {
    return env + "_" + std::string(to_string(split));
  }

  Dataset load_dataset(const std::string& name) {
    const auto cached = datasets_.find(name);
    if (cached != datasets_.end()) return cached->second;
    const auto fp = manifest_.datasets.find(name);
    const fs::path p = root_ / "data" / (name + ".jsonl");
    if (fp == manifest_.datasets.end() || !fs::exists(p)) {
      throw OrderingError("dataset '" + name + "' has not been generated; run `gen` first");
    }
    Dataset d = read_jsonl(p, cfg_.generator.layout);
    d.fingerprint = fp->second;
    datasets_[name] = d;
    return d;
  }

  // Training -----------------------------------------------------------------

  TrainConfig train_config(TrainMode mode, const std::string& env) const {
    const auto it = cfg_.train.find(std::string(to_string(mode)));
    TrainConfig tc = it != cfg_.train.end() ? it->second : TrainConfig{};
    tc.mode = mode;
    tc.hidden = cfg_.generator.dims.hidden;
    tc.seed = init_seed(cfg_, env);
    return tc;
  }

  /// Trains (or reloads) one run stored under runs/<group>/<env>.
  TrainRun ensure_run(const std::string& group, TrainMode mode, const std::string& env,
                      const Dataset& data) {
    const std::string key = "train/" + group + "/" + env;
    const std::string rel = "runs/" + group + "/" + env;
    const TrainConfig tc = train_config(mode, env);
    const std::string inputs = hex_digest(mmrm::config_to_json(tc).dump() + "|" + data.fingerprint);
    const auto cached = runs_.find(key);
    if (cached != runs_.end()) return cached->second;
    if (fresh(key, inputs)) {
      log_ << "  reuse " << rel << "\n";
      return runs_[key] = load_run(root_ / rel);
    }
    log_ << "  train " << rel << " (" << data.size() << " pairs)\n";
    const auto t0 = std::chrono::steady_clock::now();
    TrainRun run = mmrm::train(tc, data, cfg_.generator.layout);
    save_run(run, root_ / rel);
    std::vector<std::string> outs = {rel + "/config.json", rel + "/trace.csv", rel + "/primary.json"};
    if (run.auxiliary) outs.push_back(rel + "/auxiliary.json");
    record(key, inputs, outs, seconds_since(t0));
    return runs_[key] = std::move(run);
  }

  TrainRun main_run(TrainMode mode, const std::string& env) {
    return ensure_run(std::string(to_string(mode)), mode, env,
                      load_dataset(dataset_name(env, Split::kTrain)));
  }

  std::map<std::string, RewardNet> nets(TrainMode mode) {
    std::map<std::string, RewardNet> out;
    for (const auto& env : env_ids(cfg_)) out[env] = main_run(mode, env).primary;
    return out;
  }

  std::map<std::string, Dataset> tests() {
    std::map<std::string, Dataset> out;
    for (const auto& env : env_ids(cfg_)) out[env] = load_dataset(dataset_name(env, Split::kTest));
    return out;
  }

  void write_report(const std::string& rel, const std::string& text, std::vector<std::string>& outs) {
    write_text(root_ / rel, text);
    outs.push_back(rel);
  }

 private:
  static fs::path prepare(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    return dir;
  }

  ExperimentConfig cfg_;
  fs::path root_;
  std::ostream& log_;
  DirLock lock_;
  RunManifest manifest_;
  std::optional<Family> family_;
  std::map<std::string, Dataset> datasets_;
  std::map<std::string, TrainRun> runs_;
};

// Every training job the matrix, diagnostic and subsample studies need.
void train_all(Lab& lab) {
  const auto& cfg = lab.cfg();
  for (TrainMode mode : active_modes(cfg)) {
    for (const auto& env : env_ids(cfg)) lab.main_run(mode, env);
  }
  if (has_mode(cfg, TrainMode::kShortcutAware)) {
    for (const auto& spec : cfg.diagnostic_envs) {
      Dataset d = lab.family().sample(spec.env_id, Split::kTrain);
      lab.ensure_run("diagnostic", TrainMode::kShortcutAware, spec.env_id, d);
    }
  }
  for (double f : cfg.subsample_fractions) {
    for (TrainMode mode : {TrainMode::kStandard, TrainMode::kShortcutAware}) {
      if (!has_mode(cfg, mode)) continue;
      for (const auto& env : env_ids(cfg)) {
        const Dataset d = lab.load_dataset(Lab::dataset_name(env, Split::kTrain) + "_sub" + fraction_tag(f));
        lab.ensure_run("subsample" + fraction_tag(f) + "/" + std::string(to_string(mode)), mode, env, d);
      }
    }
  }
}

json matrix_summary(const GenMatrix& m) {
  return {{"mean_iid", m.mean_diagonal()}, {"mean_ood", m.mean_off_diagonal()}, {"gap", m.gap()}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.envs = default_family_specs();
  c.diagnostic_envs = {EnvironmentSpec{"D", 4, 8000, 1000, 0.0, 1.0, FreshDirection{}, 0.05, 0.5}};
  for (TrainMode m : kAllModes) {
    TrainConfig tc;
    tc.mode = m;
    c.train[std::string(to_string(m))] = tc;
  }
  c.modes = kAllModes;
  return c;
}

namespace {

json train_block(const TrainConfig& tc) {
  json j = mmrm::config_to_json(tc);
  j.erase("seed");
  j.erase("mode");
  j.erase("hidden");
  return j;
}

}  // namespace

json experiment_to_json(const ExperimentConfig& c) {
  json envs = json::array();
  for (const auto& e : c.envs) envs.push_back(spec_to_json(e));
  json diag = json::array();
  for (const auto& e : c.diagnostic_envs) diag.push_back(spec_to_json(e));
  json train = json::object();
  for (const auto& [mode, tc] : c.train) train[mode] = train_block(tc);
  json modes = json::array();
  for (TrainMode m : c.modes) modes.push_back(to_string(m));
  const auto& t = c.thresholds;
  return {{"family", c.family},
          {"envs", envs},
          {"diagnostic_envs", diag},
          {"generator", options_to_json(c.generator)},
          {"train", train},
          {"modes", modes},
          {"matrix", c.matrix},
          {"sfd", c.sfd},
          {"bon", c.bon},
          {"subsample_fractions", c.subsample_fractions},
          {"cross_pair", {c.cross_train, c.cross_test}},
          {"bon_settings",
           {{"pools_per_env", c.bon_settings.pools_per_env},
            {"candidates", c.bon_settings.pool.candidates},
            {"content_scales", c.bon_settings.pool.content_scales},
            {"marker_prob", c.bon_settings.pool.marker_prob},
            {"judge_noise", c.bon_settings.pool.judge_noise}}},
          {"thresholds",
           {{"text_iid_min", t.text_iid_min},
            {"text_ood_max", t.text_ood_max},
            {"text_cross_max", t.text_cross_max},
            {"sfd_cross_min", t.sfd_cross_min},
            {"ood_gain_min", t.ood_gain_min},
            {"iid_drop_max", t.iid_drop_max}}},
          {"out_dir", c.out_dir.string()},
          {"master_seed", c.master_seed},
          {"jobs", c.jobs}};
}

ExperimentConfig experiment_from_json(const json& doc) {
  static const std::set<std::string> known = {
      "family", "envs", "diagnostic_envs", "generator", "train", "modes", "matrix", "sfd", "bon",
      "subsample_fractions", "cross_pair", "bon_settings", "thresholds", "out_dir", "master_seed", "jobs"};
  if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  ExperimentConfig c = default_config();
  try {
    c.family = doc.value("family", c.family);
    if (c.family != "default" && c.family != "custom") {
      throw ConfigError("family must be \"default\" or \"custom\"");
    }
    if (doc.contains("envs")) {
      c.envs.clear();
      for (const auto& e : doc.at("envs")) c.envs.push_back(spec_from_json(e));
    } else if (c.family == "custom") {
      throw ConfigError("a custom family must list its envs");
    }
    if (doc.contains("diagnostic_envs")) {
      c.diagnostic_envs.clear();
      for (const auto& e : doc.at("diagnostic_envs")) c.diagnostic_envs.push_back(spec_from_json(e));
    }
    if (doc.contains("generator")) c.generator = options_from_json(doc.at("generator"));
    if (doc.contains("train")) {
      for (const auto& [mode, block] : doc.at("train").items()) {
        const TrainMode m = mode_from_string(mode);
        json merged = train_block(c.train[mode]);
        merged.update(block);
        merged["mode"] = mode;
        TrainConfig tc = mmrm::config_from_json(merged);
        tc.mode = m;
        c.train[mode] = tc;
      }
    }
    if (doc.contains("modes")) {
      c.modes.clear();
      for (const auto& m : doc.at("modes")) c.modes.push_back(mode_from_string(m.get<std::string>()));
    }
    c.matrix = doc.value("matrix", c.matrix);
    c.sfd = doc.value("sfd", c.sfd);
    c.bon = doc.value("bon", c.bon);
    c.subsample_fractions = doc.value("subsample_fractions", c.subsample_fractions);
    if (doc.contains("cross_pair")) {
      const auto pair = doc.at("cross_pair").get<std::vector<std::string>>();
      if (pair.size() != 2) throw ConfigError("cross_pair needs exactly two env ids");
      c.cross_train = pair[0];
      c.cross_test = pair[1];
    }
    if (doc.contains("bon_settings")) {
      const auto& b = doc.at("bon_settings");
      c.bon_settings.pools_per_env = b.value("pools_per_env", c.bon_settings.pools_per_env);
      c.bon_settings.pool.candidates = b.value("candidates", c.bon_settings.pool.candidates);
      c.bon_settings.pool.content_scales = b.value("content_scales", c.bon_settings.pool.content_scales);
      c.bon_settings.pool.marker_prob = b.value("marker_prob", c.bon_settings.pool.marker_prob);
      c.bon_settings.pool.judge_noise = b.value("judge_noise", c.bon_settings.pool.judge_noise);
    }
    if (doc.contains("thresholds")) {
      const auto& t = doc.at("thresholds");
      auto& o = c.thresholds;
      o.text_iid_min = t.value("text_iid_min", o.text_iid_min);
      o.text_ood_max = t.value("text_ood_max", o.text_ood_max);
      o.text_cross_max = t.value("text_cross_max", o.text_cross_max);
      o.sfd_cross_min = t.value("sfd_cross_min", o.sfd_cross_min);
      o.ood_gain_min = t.value("ood_gain_min", o.ood_gain_min);
      o.iid_drop_max = t.value("iid_drop_max", o.iid_drop_max);
    }
    c.out_dir = doc.value("out_dir", c.out_dir.string());
    c.master_seed = doc.value("master_seed", c.master_seed);
    c.jobs = doc.value("jobs", c.jobs);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  for (double f : c.subsample_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("subsample fractions must lie in (0, 1]");
  }
  if (c.envs.size() < 2) throw ConfigError("an experiment needs at least two environments");
  if (c.bon_settings.pools_per_env == 0) throw ConfigError("bon_settings.pools_per_env must be positive");
  for (const auto& [_, tc] : c.train) tc.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  try {
    return experiment_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& config) {
  json doc = experiment_to_json(config);
  doc.erase("out_dir");
  doc.erase("jobs");
  return hex_digest(doc.dump());
}

Family build_family(const ExperimentConfig& config, bool with_diagnostics) {
  auto specs = config.envs;
  if (with_diagnostics) specs.insert(specs.end(), config.diagnostic_envs.begin(), config.diagnostic_envs.end());
  return Family::make(derive_seed(config.master_seed, "family"), specs, config.generator);
}

std::uint64_t init_seed(const ExperimentConfig& config, const std::string& env_id) {
  return derive_seed(config.master_seed, "init/" + env_id);
}

std::string fraction_tag(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", fraction);
  return buf;
}

std::uint64_t subsample_seed(const ExperimentConfig& config, const std::string& env_id,
                             double fraction) {
  return derive_seed(config.master_seed, "subsample/" + env_id + "/" + fraction_tag(fraction));
}

// ---------------------------------------------------------------------------
// Manifest and lock
// ---------------------------------------------------------------------------

std::vector<std::string> RunManifest::models() const {
  std::vector<std::string> out;
  for (const auto& [key, step] : steps) {
    if (key.rfind("train/", 0) != 0) continue;
    for (const auto& [rel, _] : step.outputs) out.push_back(rel);
  }
  return out;
}

std::vector<std::string> RunManifest::reports() const {
  std::vector<std::string> out;
  for (const auto& [key, step] : steps) {
    if (key.rfind("report/", 0) != 0) continue;
    for (const auto& [rel, _] : step.outputs) out.push_back(rel);
  }
  return out;
}

json manifest_to_json(const RunManifest& m) {
  json steps = json::object();
  json timings = json::object();
  for (const auto& [key, s] : m.steps) {
    steps[key] = {{"inputs", s.inputs}, {"outputs", s.outputs}};
    timings[key] = s.seconds;
  }
  return {{"config_hash", m.config_hash},
          {"datasets", m.datasets},
          {"steps", steps},
          {"models", m.models()},
          {"reports", m.reports()},
          {"timings_seconds", timings}};
}

RunManifest manifest_from_json(const json& doc) {
  RunManifest m;
  try {
    m.config_hash = doc.value("config_hash", "");
    m.datasets = doc.value("datasets", m.datasets);
    const json timings = doc.value("timings_seconds", json::object());
    for (const auto& [key, s] : doc.at("steps").items()) {
      StepRecord r;
      r.inputs = s.at("inputs").get<std::string>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      r.seconds = timings.value(key, 0.0);
      m.steps[key] = std::move(r);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string file_hash(const fs::path& path) { return hex_digest(read_text(path)); }

std::vector<std::string> verify_artifacts(const RunManifest& m, const fs::path& root) {
  std::vector<std::string> bad;
  for (const auto& [_, step] : m.steps) {
    for (const auto& [rel, hash] : step.outputs) {
      const fs::path p = root / rel;
      if (!fs::exists(p)) {
        bad.push_back(rel + " (missing)");
      } else if (file_hash(p) != hash) {
        bad.push_back(rel + " (hash mismatch)");
      }
    }
  }
  return bad;
}

DirLock::DirLock(const fs::path& dir) : path_(dir / ".lock") {
  for (int attempt = 0; attempt < 2; ++attempt) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      const std::string pid = std::to_string(::getpid()) + "\n";
      const ssize_t n = ::write(fd, pid.data(), pid.size());
      ::close(fd);
      if (n != static_cast<ssize_t>(pid.size())) throw IoError("cannot write lock file " + path_.string());
      return;
    }
    if (errno != EEXIST) throw IoError("cannot create lock file " + path_.string());
    long owner = 0;
    {
      std::ifstream in(path_);
      in >> owner;
    }
    const bool alive = owner > 0 && (::kill(static_cast<pid_t>(owner), 0) == 0 || errno == EPERM);
    if (alive) {
      throw IoError("output directory " + dir.string() + " is locked by process " +
                    std::to_string(owner));
    }
    std::error_code ec;
    fs::remove(path_, ec);
  }
  throw IoError("cannot acquire lock " + path_.string());
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

bool ReportOutcome::all_passed() const {
  return missing.empty() &&
         std::all_of(assertions.begin(), assertions.end(), [](const Assertion& a) { return a.passed; });
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_gen(const ExperimentConfig& config, std::ostream& log) {
  Lab lab(config, log);
  log << "gen: family seed " << derive_seed(config.master_seed, "family") << "\n";
  const Family fam = build_family(config, false);
  auto& manifest = lab.manifest();

  {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string text = fam.manifest().dump(2) + "\n";
    const std::string inputs = hex_digest(text);
    if (!lab.fresh("gen/family", inputs)) {
      write_text(lab.root() / "data/family.json", text);
      lab.record("gen/family", inputs, {"data/family.json"}, seconds_since(t0));
    }
  }
  for (const auto& env : env_ids(config)) {
    for (Split split : {Split::kTrain, Split::kTest}) {
      const std::string name = Lab::dataset_name(env, split);
      const std::string rel = "data/" + name + ".jsonl";
      const std::string fp = fam.fingerprint(env, split);
      manifest.datasets[name] = fp;
      if (lab.fresh("gen/" + name, fp)) {
        log << "  reuse " << rel << "\n";
        continue;
      }
      const auto t0 = std::chrono::steady_clock::now();
      const Dataset d = fam.sample(env, split);
      write_jsonl(d, lab.root() / rel);
      lab.record("gen/" + name, fp, {rel}, seconds_since(t0));
      log << "  wrote " << rel << " (" << d.size() << " pairs, fingerprint " << fp << ")\n";
    }
    for (double f : config.subsample_fractions) {
      const std::string name = Lab::dataset_name(env, Split::kTrain) + "_sub" + fraction_tag(f);
      const std::string rel = "data/" + name + ".jsonl";
      const Dataset full = lab.load_dataset(Lab::dataset_name(env, Split::kTrain));
      const Dataset sub = subsample(full, f, subsample_seed(config, env, f));
      manifest.datasets[name] = sub.fingerprint;
      if (lab.fresh("gen/" + name, sub.fingerprint)) continue;
      const auto t0 = std::chrono::steady_clock::now();
      write_jsonl(sub, lab.root() / rel);
      lab.record("gen/" + name, sub.fingerprint, {rel}, seconds_since(t0));
      log << "  wrote " << rel << " (" << sub.size() << " pairs)\n";
    }
  }
  lab.save_manifest();
}

void cmd_train(const ExperimentConfig& config, std::ostream& log) {
  Lab lab(config, log);
  log << "train\n";
  train_all(lab);
}

void cmd_matrix(const ExperimentConfig& config, std::ostream& log) {
  Lab lab(config, log);
  log << "matrix\n";
  train_all(lab);
  const auto t0 = std::chrono::steady_clock::now();
  const auto envs = env_ids(config);
  const auto tests = lab.tests();
  std::vector<std::string> outs;
  json summary = json::object();
  std::map<std::string, GenMatrix> mats;

  for (TrainMode mode : active_modes(config)) {
    const std::string name(to_string(mode));
    const GenMatrix m = gen_matrix(name, envs, lab.nets(mode), tests, mode == TrainMode::kTextOnly);
    mats[name] = m;
    lab.write_report("reports/matrix_" + name + ".csv", matrix_to_csv(m), outs);
    lab.write_report("reports/matrix_" + name + ".json", matrix_to_json(m).dump(2) + "\n", outs);
    lab.write_report("reports/matrix_" + name + ".svg", svg::heatmap(m, name + " accuracy (%)"), outs);
    summary[name] = matrix_summary(m);
    log << "  " << name << ": i.i.d. " << fixed(m.mean_diagonal()) << "  o.o.d. "
        << fixed(m.mean_off_diagonal()) << "\n";
  }
  if (mats.contains("standard") && mats.contains("shortcut_aware")) {
    summary["delta_ood"] = mats["shortcut_aware"].mean_off_diagonal() - mats["standard"].mean_off_diagonal();
    summary["delta_iid"] = mats["shortcut_aware"].mean_diagonal() - mats["standard"].mean_diagonal();
  }
  lab.write_report("reports/matrix_summary.json", summary.dump(2) + "\n", outs);

  if (has_mode(config, TrainMode::kTextOnly)) {
    json rows = json::array();
    for (const auto& env : envs) {
      const RewardNet net = lab.main_run(TrainMode::kTextOnly, env).primary;
      const Dataset& test = tests.at(env);
      json row = {{"env_id", env}, {"full", accuracy(net, test, true)}};
      try {
        const Dataset bal = length_balanced_subset(test, derive_seed(config.master_seed, "balance/" + env));
        row["balanced"] = accuracy(net, bal, true);
        row["balanced_size"] = bal.size();
      } catch (const DomainError&) {
        row["balanced"] = nullptr;
      }
      rows.push_back(row);
    }
    lab.write_report("reports/length_balanced.json", json{{"text_only", rows}}.dump(2) + "\n", outs);
  }

  if (has_mode(config, TrainMode::kShortcutAware)) {
    std::vector<SfcRhoRow> rows;
    json profiles = json::array();
    const auto add = [&](const EnvironmentSpec& spec, const TrainRun& run) {
      rows.push_back({spec.env_id, spec.beta, 0.0, run.epochs.back().sfc->mean});
      const SfcProfile& e1 = *run.epochs.front().sfc;
      profiles.push_back({{"env_id", spec.env_id},
                          {"epoch1_shortcut", e1.mean_shortcut ? json(*e1.mean_shortcut) : json()},
                          {"epoch1_no_shortcut", e1.mean_no_shortcut ? json(*e1.mean_no_shortcut) : json()},
                          {"final_mean", run.epochs.back().sfc->mean}});
    };
    for (const auto& spec : config.envs) add(spec, lab.main_run(TrainMode::kShortcutAware, spec.env_id));
    for (const auto& spec : config.diagnostic_envs) {
      add(spec, lab.ensure_run("diagnostic", TrainMode::kShortcutAware, spec.env_id,
                               lab.family().sample(spec.env_id, Split::kTrain)));
    }
    json doc = sfc_rho_to_json(sfc_rho_diagnostic(rows));
    doc["profiles"] = profiles;
    lab.write_report("reports/sfc_rho.json", doc.dump(2) + "\n", outs);
  }

  if (!config.subsample_fractions.empty()) {
    json rows = json::array();
    for (const auto& [name, m] : mats) {
      if (name == "text_only") continue;
      rows.push_back({{"fraction", 1.0}, {"mode", name}, {"mean_iid", m.mean_diagonal()},
                      {"mean_ood", m.mean_off_diagonal()}});
    }
    for (double f : config.subsample_fractions) {
      for (TrainMode mode : {TrainMode::kStandard, TrainMode::kShortcutAware}) {
        if (!has_mode(config, mode)) continue;
        const std::string name(to_string(mode));
        std::map<std::string, RewardNet> nets;
        for (const auto& env : envs) {
          const Dataset d = lab.load_dataset(Lab::dataset_name(env, Split::kTrain) + "_sub" + fraction_tag(f));
          nets[env] = lab.ensure_run("subsample" + fraction_tag(f) + "/" + name, mode, env, d).primary;
        }
        const GenMatrix m = gen_matrix(name, envs, nets, tests, false);
        rows.push_back({{"fraction", f}, {"mode", name}, {"mean_iid", m.mean_diagonal()},
                        {"mean_ood", m.mean_off_diagonal()}});
      }
    }
    lab.write_report("reports/subsample.json", json{{"rows", rows}}.dump(2) + "\n", outs);
  }
  lab.record("report/matrix", config_hash(config), outs, seconds_since(t0));
}

void cmd_sfd(const ExperimentConfig& config, std::ostream& log) {
  Lab lab(config, log);
  log << "sfd\n";
  const auto envs = env_ids(config);
  std::vector<TrainMode> modes;
  for (TrainMode m : {TrainMode::kStandard, TrainMode::kShortcutAware}) {
    if (has_mode(config, m)) modes.push_back(m);
  }
  std::map<std::string, RewardNet> proxies;
  for (const auto& env : envs) proxies[env] = lab.main_run(TrainMode::kTextOnly, env).primary;
  std::map<TrainMode, std::map<std::string, RewardNet>> nets;
  for (TrainMode m : modes) nets[m] = lab.nets(m);

  const auto t0 = std::chrono::steady_clock::now();
  const auto tests = lab.tests();
  json doc = json::object();
  std::ostringstream csv;
  csv << "mode,train,test,n_success,n_fail,acc_on_success,acc_on_fail,sfd\n";
  for (TrainMode m : modes) {
    const std::string name(to_string(m));
    json reports = json::array();
    for (const auto& tr : envs) {
      for (const auto& te : envs) {
        if (tr == te) continue;
        const ShortcutSplit split = shortcut_split(proxies.at(tr), tests.at(te));
        const SFDReport r = sfd_or_missing(nets[m].at(tr), tests.at(te), split, tr);
        reports.push_back(sfd_to_json(r));
        const auto cell = [](const std::optional<double>& x) { return x ? fixed(*x, 6) : std::string(); };
        csv << name << ',' << tr << ',' << te << ',' << r.n_success << ',' << r.n_fail << ','
            << cell(r.acc_on_success) << ',' << cell(r.acc_on_fail) << ',' << cell(r.sfd) << '\n';
        if (!r.defined()) log << "  " << name << " " << tr << "->" << te << ": SFD undefined (empty subset)\n";
      }
    }
    doc[name] = reports;
  }
  std::vector<std::string> outs;
  lab.write_report("reports/sfd.json", doc.dump(2) + "\n", outs);
  lab.write_report("reports/sfd.csv", csv.str(), outs);

  json bias = json::array();
  for (TrainMode m : modes) {
    for (const auto& env : envs) {
      json row = bias_to_json(score_correlation(nets[m].at(env), proxies.at(env), tests.at(env)));
      row["mode"] = to_string(m);
      row["env_id"] = env;
      bias.push_back(row);
    }
  }
  lab.write_report("reports/bias.json", bias.dump(2) + "\n", outs);
  lab.record("report/sfd", config_hash(config), outs, seconds_since(t0));
}

void cmd_bon(const ExperimentConfig& config, std::ostream& log) {
  Lab lab(config, log);
  log << "bon\n";
  const auto envs = env_ids(config);
  const auto modes = active_modes(config);
  std::map<TrainMode, std::map<std::string, RewardNet>> nets;
  for (TrainMode m : modes) nets[m] = lab.nets(m);

  const auto t0 = std::chrono::steady_clock::now();
  const Family& fam = lab.family();
  const std::uint64_t seed = derive_seed(config.master_seed, "bon");
  const auto grid = default_bon_grid(config.bon_settings.pool.candidates);
  std::vector<std::string> outs;
  std::map<std::string, std::vector<CandidatePool>> pools;
  for (const auto& env : envs) {
    auto& p = pools[env];
    p = make_pools(fam, env, config.bon_settings.pools_per_env, seed, config.bon_settings.pool);
    for (TrainMode m : modes) {
      for (const auto& tr : envs) {
        score_pools(p, std::string(to_string(m)) + "/" + tr, nets[m].at(tr), m == TrainMode::kTextOnly);
      }
    }
    std::string lines;
    for (const auto& pool : p) lines += pool_to_json(pool).dump() + "\n";
    lab.write_report("reports/bon/pools_" + env + ".jsonl", lines, outs);
  }

  json summary = json::object();
  std::vector<svg::Series> ood_series, iid_series;
  for (TrainMode m : modes) {
    const std::string name(to_string(m));
    std::vector<double> iid(grid.size(), 0.0), ood(grid.size(), 0.0);
    std::size_t n_iid = 0, n_ood = 0;
    json cells = json::array();
    for (const auto& tr : envs) {
      for (const auto& te : envs) {
        const BonCurve c = bon_curve(pools.at(te), name + "/" + tr, grid);
        lab.write_report("reports/bon/" + name + "_" + tr + "_on_" + te + ".csv", curve_to_csv(c), outs);
        auto& acc = tr == te ? iid : ood;
        for (std::size_t g = 0; g < grid.size(); ++g) acc[g] += c.score[g];
        ++(tr == te ? n_iid : n_ood);
        cells.push_back({{"train", tr}, {"pools", te}, {"scores", c.score}});
      }
    }
    for (double& x : iid) x /= static_cast<double>(n_iid);
    for (double& x : ood) x /= static_cast<double>(n_ood);
    summary[name] = {{"iid", iid}, {"ood", ood}, {"cells", cells}};
    std::vector<double> xs(grid.begin(), grid.end());
    iid_series.push_back({name, xs, iid});
    ood_series.push_back({name, xs, ood});
    log << "  " << name << ": best-of-" << grid.back() << " i.i.d. " << fixed(iid.back())
        << "  o.o.d. " << fixed(ood.back()) << "\n";
  }
  summary["grid"] = grid;
  summary["pools_per_env"] = config.bon_settings.pools_per_env;
  lab.write_report("reports/bon/summary.json", summary.dump(2) + "\n", outs);
  lab.write_report("reports/bon/ood.svg",
                   svg::line_chart("Best-of-N on o.o.d. pools", "N", "judge score", ood_series, true), outs);
  lab.write_report("reports/bon/iid.svg",
                   svg::line_chart("Best-of-N on i.i.d. pools", "N", "judge score", iid_series, true), outs);
  lab.record("report/bon", config_hash(config), outs, seconds_since(t0));
}

// ---------------------------------------------------------------------------

namespace {

struct Checker {
  std::vector<Assertion>& out;
  void operator()(const std::string& name, bool ok, const std::string& detail) {
    out.push_back({name, ok, detail});
  }
};

std::optional<double> cell_sfd(const json& reports, const std::string& tr, const std::string& te) {
  for (const auto& r : reports) {
    if (r.at("train_env") == tr && r.at("test_env") == te) {
      return r.at("sfd").is_null() ? std::nullopt : std::optional<double>(r.at("sfd").get<double>());
    }
  }
  return std::nullopt;
}

}  // namespace

ReportOutcome cmd_report(const ExperimentConfig& config, std::ostream& log) {
  Lab lab(config, log);
  log << "report\n";
  ReportOutcome outcome;
  const fs::path root = lab.root();
  const auto& t = config.thresholds;
  const auto envs = env_ids(config);

  outcome.missing = verify_artifacts(lab.manifest(), root);
  const auto need = [&](const std::string& rel) -> std::optional<json> {
    if (!fs::exists(root / rel)) {
      outcome.missing.push_back(rel + " (missing)");
      return std::nullopt;
    }
    return read_json(root / rel);
  };
  for (TrainMode m : active_modes(config)) {
    for (const auto& env : envs) {
      const std::string rel = "runs/" + std::string(to_string(m)) + "/" + env + "/primary.json";
      if (!fs::exists(root / rel)) outcome.missing.push_back(rel + " (missing)");
    }
  }

  Checker check{outcome.assertions};
  json body = json::object();
  body["config_hash"] = config_hash(config);
  body["datasets"] = lab.manifest().datasets;

  std::map<std::string, json> mats;
  if (config.matrix) {
    for (TrainMode m : active_modes(config)) {
      const std::string name(to_string(m));
      if (auto doc = need("reports/matrix_" + name + ".json")) mats[name] = *doc;
    }
    json ms = json::object();
    for (const auto& [name, doc] : mats) ms[name] = {{"mean_iid", doc.at("mean_iid")}, {"mean_ood", doc.at("mean_ood")},
                                                     {"gap", doc.at("gap")}, {"acc", doc.at("acc")}};
    body["matrices"] = ms;
  }
  const auto acc_at = [&](const json& doc, const std::string& tr, const std::string& te) {
    const auto e = doc.at("envs").get<std::vector<std::string>>();
    const auto i = std::find(e.begin(), e.end(), tr) - e.begin();
    const auto j = std::find(e.begin(), e.end(), te) - e.begin();
    return doc.at("acc").at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(j)).get<double>();
  };
  const bool cross = !config.cross_train.empty() &&
                     std::find(envs.begin(), envs.end(), config.cross_train) != envs.end() &&
                     std::find(envs.begin(), envs.end(), config.cross_test) != envs.end();
  const std::string cross_cell = config.cross_train + "->" + config.cross_test;

  if (mats.contains("text_only")) {
    const json& m = mats["text_only"];
    const double iid = m.at("mean_iid"), ood = m.at("mean_ood");
    check("text_only i.i.d. mean >= " + fixed(t.text_iid_min, 2), iid >= t.text_iid_min, fixed(iid));
    check("text_only o.o.d. mean <= " + fixed(t.text_ood_max, 2), ood <= t.text_ood_max, fixed(ood));
    if (cross) {
      const double v = acc_at(m, config.cross_train, config.cross_test);
      check("text_only " + cross_cell + " <= " + fixed(t.text_cross_max, 2), v <= t.text_cross_max, fixed(v));
    }
  }
  if (mats.contains("standard") && mats.contains("shortcut_aware")) {
    const json& s = mats["standard"];
    const json& a = mats["shortcut_aware"];
    const double gain = a.at("mean_ood").get<double>() - s.at("mean_ood").get<double>();
    check("shortcut_aware o.o.d. gain over standard >= " + fixed(t.ood_gain_min, 2), gain >= t.ood_gain_min,
          fixed(gain));
    const double drop = s.at("mean_iid").get<double>() - a.at("mean_iid").get<double>();
    check("shortcut_aware i.i.d. drop <= " + fixed(t.iid_drop_max, 2), drop <= t.iid_drop_max, fixed(drop));
    const double gs = s.at("gap"), ga = a.at("gap");
    check("gap(standard) > gap(shortcut_aware)", gs > ga, fixed(gs) + " vs " + fixed(ga));
  }

  if (config.sfd) {
    if (auto doc = need("reports/sfd.json")) {
      body["sfd"] = *doc;
      if (doc->contains("standard")) {
        const json& std_r = doc->at("standard");
        bool positive = true;
        std::string worst;
        for (const auto& r : std_r) {
          if (r.at("sfd").is_null() || !(r.at("sfd").get<double>() > 0.0)) {
            positive = false;
            worst += r.at("train_env").get<std::string>() + "->" + r.at("test_env").get<std::string>() + " ";
          }
        }
        check("standard SFD > 0 on every o.o.d. cell", positive, positive ? "all cells" : "fails: " + worst);
        if (cross) {
          const auto v = cell_sfd(std_r, config.cross_train, config.cross_test);
          check("standard SFD " + cross_cell + " >= " + fixed(t.sfd_cross_min, 2),
                v && *v >= t.sfd_cross_min, v ? fixed(*v) : "undefined");
        }
        if (doc->contains("shortcut_aware")) {
          bool lower = true;
          std::string fails;
          for (const auto& tr : envs) {
            for (const auto& te : envs) {
              if (tr == te) continue;
              const auto s = cell_sfd(std_r, tr, te);
              const auto a = cell_sfd(doc->at("shortcut_aware"), tr, te);
              if (!s || !a || !(*a < *s)) {
                lower = false;
                fails += tr + "->" + te + " ";
              }
            }
          }
          check("shortcut_aware SFD < standard SFD on every o.o.d. cell", lower,
                lower ? "all cells" : "fails: " + fails);
        }
      }
    }
  }

  if (config.matrix && has_mode(config, TrainMode::kShortcutAware)) {
    if (auto doc = need("reports/sfc_rho.json")) {
      body["sfc_rho"] = *doc;
      bool targeted = true;
      std::string detail;
      for (const auto& p : doc->at("profiles")) {
        const std::string env = p.at("env_id");
        if (std::find(envs.begin(), envs.end(), env) == envs.end()) continue;
        if (p.at("epoch1_shortcut").is_null() || p.at("epoch1_no_shortcut").is_null()) continue;
        const double sc = p.at("epoch1_shortcut"), nosc = p.at("epoch1_no_shortcut");
        if (!(nosc > sc)) targeted = false;
        detail += env + " " + fixed(nosc) + ">" + fixed(sc) + " ";
      }
      check("epoch-1 SFC higher without shortcut than with, every env", targeted, detail);
      if (!doc->at("skipped").get<bool>()) {
        std::string rows;
        for (const auto& r : doc->at("rows")) {
          rows += r.at("env_id").get<std::string>() + "(beta " + fixed(r.at("beta"), 2) + ") " +
                  fixed(r.at("mean_sfc")) + " ";
        }
        check("final mean SFC strictly decreasing in beta", doc->at("ordered").get<bool>(), rows);
      }
    }
    if (auto doc = need("reports/length_balanced.json")) body["length_balanced"] = *doc;
    if (!config.subsample_fractions.empty()) {
      if (auto doc = need("reports/subsample.json")) body["subsample"] = *doc;
    }
  }

  if (config.bon) {
    if (auto doc = need("reports/bon/summary.json")) {
      json b = json::object();
      for (const auto& [key, v] : doc->items()) {
        if (v.is_object() && v.contains("ood")) b[key] = {{"iid", v.at("iid")}, {"ood", v.at("ood")}};
      }
      b["grid"] = doc->at("grid");
      body["bon"] = b;
      if (doc->contains("standard") && doc->contains("shortcut_aware")) {
        const double s = doc->at("standard").at("ood").back(), a = doc->at("shortcut_aware").at("ood").back();
        const std::size_t m = doc->at("grid").back();
        check("best-of-" + std::to_string(m) + " o.o.d.: shortcut_aware >= standard", a >= s,
              fixed(a) + " vs " + fixed(s));
        const double s1 = doc->at("standard").at("ood").front(), a1 = doc->at("shortcut_aware").at("ood").front();
        check("best-of-1 identical across nets", s1 == a1, fixed(s1, 6) + " vs " + fixed(a1, 6));
      }
    }
  }

  std::sort(outcome.missing.begin(), outcome.missing.end());
  outcome.missing.erase(std::unique(outcome.missing.begin(), outcome.missing.end()), outcome.missing.end());
  json asserts = json::array();
  for (const auto& a : outcome.assertions) asserts.push_back({{"name", a.name}, {"passed", a.passed}, {"detail", a.detail}});
  body["assertions"] = asserts;
  body["missing_artifacts"] = outcome.missing;
  body["passed"] = outcome.all_passed();

  std::ostringstream txt;
  txt << "mmrm-lab report (config " << body["config_hash"].get<std::string>() << ")\n\n";
  if (body.contains("matrices")) {
    for (const auto& [name, m] : body["matrices"].items()) {
      txt << name << ": i.i.d. " << fixed(m.at("mean_iid")) << "  o.o.d. " << fixed(m.at("mean_ood"))
          << "  gap " << fixed(m.at("gap")) << "\n";
    }
    txt << "\n";
  }
  for (const auto& a : outcome.assertions) {
    txt << (a.passed ? "PASS  " : "FAIL  ") << a.name << "  [" << a.detail << "]\n";
  }
  for (const auto& m : outcome.missing) txt << "MISSING  " << m << "\n";
  txt << "\n" << (outcome.all_passed() ? "all checks passed" : "some checks failed") << "\n";

  write_text(root / "report.json", body.dump(2) + "\n");
  write_text(root / "report.txt", txt.str());
  log << txt.str();
  return outcome;
}

ReportOutcome run_pipeline(const ExperimentConfig& config, std::ostream& log) {
  cmd_gen(config, log);
  if (config.matrix) cmd_matrix(config, log);
  else cmd_train(config, log);
  if (config.sfd) cmd_sfd(config, log);
  if (config.bon) cmd_bon(config, log);
  return cmd_report(config, log);
}

}  // namespace mmrm::lab
