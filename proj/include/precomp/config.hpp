#pragma once

#include "precomp/core.hpp"
#include "precomp/io.hpp"
#include "precomp/nnmodel.hpp"
#include "precomp/plant.hpp"
#include "precomp/stage1.hpp"
#include "precomp/stage2.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <sstream>
#include <string>

namespace precomp {

/// Flat [section] key=value configuration. One file fully reproduces a run;
/// command-line flags override individual entries. Unknown keys are kept
/// (and hashed) verbatim.
class RunConfig {
 public:
  static RunConfig defaults() {
    RunConfig c;
    c.set("paths", "workspace", "runs");
    c.set("plant", "omega_hz", "12");
    c.set("plant", "zeta", "0.8");
    c.set("plant", "kappa", "0.05");
    c.set("plant", "eps_xy", "0");
    c.set("plant", "noise_std", "2e-6");
    c.set("plant", "seed", "1");
    c.set("plant", "substeps", "25");
    c.set("datagen", "seed", "7");
    c.set("datagen", "points_per_axis", "220000");
    c.set("datagen", "random_fraction", "0.6");
    c.set("datagen", "random_duration_s", "10");
    c.set("datagen", "train_amax_levels", "0.5,1,2,3,5");
    c.set("datagen", "test_amax_levels", "0.5,1,2,3");
    c.set("datagen", "test_trajs_per_level", "6");
    c.set("datagen", "test_duration_s", "8");
    c.set("train", "batch_size", "2048");
    c.set("train", "epochs", "30");
    c.set("train", "lr0", "1e-3");
    c.set("train", "lr_decay", "0.97");
    c.set("train", "seed", "3");
    c.set("stage1", "n_points", "0");
    c.set("stage1", "a_max", "1");
    c.set("stage1", "v_max", "1.5");
    c.set("stage1", "smooth_weight", "1");
    c.set("stage1", "dtau_min", "1e-4");
    c.set("stage1", "horizon", "0");
    c.set("stage1", "tolerance", "2e-5");
    c.set("stage2", "rho_slack", "1000");
    c.set("stage2", "horizon2", "11");
    c.set("stage2", "mode", "oneshot");
    c.set("stage2", "v_max", "1.5");
    return c;
  }

  static RunConfig parse(const std::string& text) {
    RunConfig c = defaults();
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw IoError("config line " + std::to_string(lineno) + ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!value.empty() && value.front() == '"' && value.back() == '"' && value.size() >= 2)
        value = value.substr(1, value.size() - 2);
      c.set(section, key, value);
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return parse(io::read_file(path));
  }

  void set(const std::string& section, const std::string& key, const std::string& value) {
    values_[section + "." + key] = value;
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }

  std::string str(const std::string& section, const std::string& key) const {
    const auto it = values_.find(section + "." + key);
    if (it == values_.end()) throw IoError("config: missing key " + section + "." + key);
    return it->second;
  }

  double num(const std::string& section, const std::string& key) const {
    return std::stod(str(section, key));
  }
  long integer(const std::string& section, const std::string& key) const {
    return std::stol(str(section, key));
  }
  std::uint64_t seed(const std::string& section, const std::string& key) const {
    return std::stoull(str(section, key));
  }

  std::vector<double> num_list(const std::string& section, const std::string& key) const {
    std::vector<double> out;
    std::istringstream ss(str(section, key));
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) out.push_back(std::stod(item));
    return out;
  }

  /// Canonical serialization (sorted), used for hashing and echoing.
  std::string canonical() const {
    std::string prev_section;
    std::ostringstream out;
    for (const auto& [k, v] : values_) {
      const auto dot = k.find('.');
      const std::string section = k.substr(0, dot);
      if (section != prev_section) {
        out << '[' << section << "]\n";
        prev_section = section;
      }
      out << k.substr(dot + 1) << " = " << v << '\n';
    }
    return out.str();
  }

  std::string hash() const { return io::hash_hex(io::fnv1a64(canonical())); }

  nlohmann::ordered_json echo_json() const {
    nlohmann::ordered_json j;
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

  // Typed section views ------------------------------------------------------

  PlantConfig plant() const {
    PlantConfig p;
    p.omega = 2.0 * std::numbers::pi * num("plant", "omega_hz");
    p.zeta = num("plant", "zeta");
    p.kappa = num("plant", "kappa");
    p.eps_xy = num("plant", "eps_xy");
    p.noise_std = num("plant", "noise_std");
    p.seed = seed("plant", "seed");
    p.substeps = static_cast<int>(integer("plant", "substeps"));
    p.validate();
    return p;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.batch_size = static_cast<int>(integer("train", "batch_size"));
    t.epochs = static_cast<int>(integer("train", "epochs"));
    t.lr0 = num("train", "lr0");
    t.lr_decay = num("train", "lr_decay");
    t.seed = seed("train", "seed");
    t.validate();
    return t;
  }

  Stage1Config stage1(double total_length) const {
    Stage1Config c;
    c.n_points = static_cast<int>(integer("stage1", "n_points"));
    c.a_max = num("stage1", "a_max");
    c.v_max = num("stage1", "v_max");
    c.smooth_weight = num("stage1", "smooth_weight");
    c.dtau_min = num("stage1", "dtau_min");
    c.horizon = static_cast<int>(integer("stage1", "horizon"));
    c.mu = ToleranceProfile::constant(num("stage1", "tolerance"), total_length);
    c.validate();
    return c;
  }

  Stage2Config stage2(double total_length) const {
    Stage2Config c;
    c.rho_slack = num("stage2", "rho_slack");
    c.horizon2 = static_cast<int>(integer("stage2", "horizon2"));
    c.v_max = num("stage2", "v_max");
    c.a_max = num("stage1", "a_max");
    c.mode = str("stage2", "mode") == "receding" ? Stage2Config::Mode::Receding
                                                 : Stage2Config::Mode::OneShot;
    c.mu = ToleranceProfile::constant(num("stage1", "tolerance"), total_length);
    c.validate();
    return c;
  }

  std::filesystem::path workspace() const { return str("paths", "workspace"); }

 private:
  std::map<std::string, std::string> values_;
};

/// Workspace artifact registry: every written artifact is recorded with a
/// content hash and the producing config hash; `verify` re-checks both.
class ArtifactLog {
 public:
  ArtifactLog(std::filesystem::path workspace, std::string config_hash)
      : workspace_(std::move(workspace)), config_hash_(std::move(config_hash)) {
    manifest_path_ = workspace_ / "manifest.json";
    if (std::filesystem::exists(manifest_path_)) {
      const auto j = nlohmann::json::parse(io::read_file(manifest_path_));
      for (const auto& e : j.at("artifacts"))
        entries_[e.at("path").get<std::string>()] = {e.at("content_hash").get<std::string>(),
                                                     e.at("config_hash").get<std::string>()};
    }
  }

  void write(const std::filesystem::path& rel, const std::string& contents) {
    io::atomic_write(workspace_ / rel, contents);
    entries_[rel.generic_string()] = {io::hash_hex(io::fnv1a64(contents)), config_hash_};
    flush();
  }

  void record_external(const std::filesystem::path& rel) {
    const std::string contents = io::read_file(workspace_ / rel);
    entries_[rel.generic_string()] = {io::hash_hex(io::fnv1a64(contents)), config_hash_};
    flush();
  }

  struct VerifyResult {
    std::vector<std::string> ok, changed, missing;
  };

  VerifyResult verify() const {
    VerifyResult res;
    for (const auto& [rel, meta] : entries_) {
      const auto path = workspace_ / rel;
      if (!std::filesystem::exists(path)) {
        res.missing.push_back(rel);
        continue;
      }
      const std::string h = io::hash_hex(io::fnv1a64(io::read_file(path)));
      (h == meta.first ? res.ok : res.changed).push_back(rel);
    }
    return res;
  }

 private:
  void flush() const {
    nlohmann::ordered_json j;
    auto arr = nlohmann::json::array();
    for (const auto& [rel, meta] : entries_)
      arr.push_back({{"path", rel}, {"content_hash", meta.first}, {"config_hash", meta.second}});
    j["artifacts"] = std::move(arr);
    io::atomic_write(manifest_path_, j.dump(2) + "\n");
  }

  std::filesystem::path workspace_;
  std::string config_hash_;
  std::filesystem::path manifest_path_;
  std::map<std::string, std::pair<std::string, std::string>> entries_;
};

}  // namespace precomp
