#pragma once

// Flat key=value configuration with typed accessors. Every key is declared in
// one table with its default and documentation; unknown keys are rejected by
// name. The training-relevant subset hashes to a stable id that couples
// checkpoints to the configuration that produced them.

#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "rdl/corpus.hpp"
#include "rdl/io_util.hpp"
#include "rdl/teacher.hpp"
#include "rdl/trainer.hpp"

namespace rdl {

struct ConfigKey {
  const char* key;
  const char* def;
  const char* doc;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", "42", "root seed; every stream derives from it via labeled substreams"},
      {"corpus.n_train", "2000", "training items"},
      {"corpus.n_test", "500", "held-out test items (same generative world)"},
      {"corpus.latent_dim", "8", "latent factor dimension"},
      {"corpus.view_a_dim", "24", "first view (image-like) dimension"},
      {"corpus.view_b_dim", "16", "second view (text-like) dimension"},
      {"corpus.clusters", "20", "cluster count"},
      {"corpus.intra_spread", "0.15", "latent scatter around cluster centers"},
      {"corpus.noise_sigma", "0.1", "observation noise per view coordinate"},
      {"corpus.identity_mixing", "0", "1: views equal latents (requires matching dims)"},
      {"teacher.alpha", "30", "teacher sigmoid sharpness"},
      {"teacher.r0", "0.75", "teacher sigmoid midpoint"},
      {"teacher.epsilon", "0", "teacher logit noise scale"},
      {"teacher.calib_alpha_lo", "5", "calibration search box: alpha lower bound"},
      {"teacher.calib_alpha_hi", "40", "calibration search box: alpha upper bound"},
      {"teacher.calib_r0_lo", "0.4", "calibration search box: r0 lower bound"},
      {"teacher.calib_r0_hi", "0.85", "calibration search box: r0 upper bound"},
      {"bank.n", "1000", "offline bank: top-N candidates per query"},
      {"train.embed_dim", "32", "student embedding dimension"},
      {"train.tau_init", "0.07", "initial temperature"},
      {"train.batch", "64", "batch size"},
      {"train.epochs", "30", "epochs (shuffled passes, remainder dropped)"},
      {"train.lr_peak", "0.003", "peak learning rate after warmup"},
      {"train.lr_floor", "0.0001", "cosine floor learning rate"},
      {"train.warmup", "100", "linear warmup steps"},
      {"train.weight_decay", "0.02", "decoupled weight decay (temperature excluded)"},
      {"train.k", "16", "hard negatives mined per query"},
      {"train.m", "0.75", "teacher-score validity threshold"},
      {"train.nq", "512", "feature queue capacity (full-scale reference: 57856)"},
      {"train.nc", "512", "reference-id queue capacity (full-scale reference: 16384)"},
      {"train.mu", "0.995", "momentum encoder EMA coefficient"},
      {"train.method", "none",
       "distillation: none|cprd|cprd_single|cprd_trunc|kl|m3se|r_m3se"},
      {"train.target_mode", "online", "teacher scoring: online|offline (offline needs banks)"},
      {"train.kl_teacher_tau", "1", "teacher softmax temperature for kl"},
      {"train.checkpoint_every", "0", "checkpoint period in steps (0: final only)"},
      {"eval.rerank_ks", "0,4,16,32", "rerank depths for the two-stage study"},
      {"eval.bootstrap_resamples", "1000", "bootstrap resamples"},
      {"eval.hist_bins", "40", "histogram bins"},
      {"eval.hist_pairs", "10000", "random pairs for histograms"},
      {"ablate.axis", "m", "sweep axis: m|k|nc|method|rerank"},
      {"ablate.values", "0,0.25,0.5,0.75,0.9", "comma-separated sweep values"},
      {"ablate.seeds", "3", "seeds per sweep point (median reported)"},
  };
  return schema;
}

class LabConfig {
 public:
  static LabConfig defaults() {
    LabConfig c;
    for (const auto& k : config_schema()) c.kv_[k.key] = k.def;
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (kv_.find(key) == kv_.end())
      throw std::invalid_argument("unknown config key: " + key);
    kv_[key] = value;
  }

  // "key=value" with optional spaces around '='.
  void apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config override must be key=value: " + assignment);
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void apply_file(const std::string& path) {
    for (const auto& raw : read_lines(path)) {
      std::string line = raw;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      apply_override(line);
    }
  }

  const std::string& get(const std::string& key) const {
    const auto it = kv_.find(key);
    if (it == kv_.end()) throw std::invalid_argument("unknown config key: " + key);
    return it->second;
  }

  long long get_int(const std::string& key) const { return parse_int(get(key)); }
  double get_double(const std::string& key) const { return parse_double(get(key)); }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw std::invalid_argument("config key " + key + " must be boolean, got: " + v);
  }

  std::vector<double> get_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split(get(key), ','))
      if (!trim(tok).empty()) out.push_back(parse_double(trim(tok)));
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& tok : split(get(key), ','))
      if (!trim(tok).empty()) out.push_back(trim(tok));
    return out;
  }

  const std::map<std::string, std::string>& items() const { return kv_; }

  // Hash over the keys that shape training artifacts (corpus, teacher
  // parameters, bank, trainer, seed). Evaluation and sweep keys are excluded
  // so changing them never invalidates a checkpoint.
  std::uint64_t training_hash() const {
    std::string canon;
    for (const auto& [k, v] : kv_) {
      if (!affects_training(k)) continue;
      canon += k;
      canon += '=';
      canon += v;
      canon += '\n';
    }
    return fnv1a(canon);
  }

  CorpusConfig corpus_config() const {
    CorpusConfig c;
    c.n_items = static_cast<int>(get_int("corpus.n_train") + get_int("corpus.n_test"));
    c.latent_dim = static_cast<int>(get_int("corpus.latent_dim"));
    c.view_a_dim = static_cast<int>(get_int("corpus.view_a_dim"));
    c.view_b_dim = static_cast<int>(get_int("corpus.view_b_dim"));
    c.cluster_count = static_cast<int>(get_int("corpus.clusters"));
    c.intra_spread = get_double("corpus.intra_spread");
    c.noise_sigma = get_double("corpus.noise_sigma");
    c.identity_mixing = get_bool("corpus.identity_mixing");
    return c;
  }

  TeacherSim teacher_sim() const {
    TeacherSim t;
    t.alpha = get_double("teacher.alpha");
    t.r0 = get_double("teacher.r0");
    t.epsilon = get_double("teacher.epsilon");
    t.noise_seed = derive_seed(seed(), "teacher.noise");
    validate_teacher(t);
    return t;
  }

  CalibrationBounds calibration_bounds() const {
    CalibrationBounds b;
    b.alpha_lo = get_double("teacher.calib_alpha_lo");
    b.alpha_hi = get_double("teacher.calib_alpha_hi");
    b.r0_lo = get_double("teacher.calib_r0_lo");
    b.r0_hi = get_double("teacher.calib_r0_hi");
    return b;
  }

  TrainerConfig trainer_config() const {
    TrainerConfig t;
    t.embed_dim = static_cast<int>(get_int("train.embed_dim"));
    t.tau_init = get_double("train.tau_init");
    t.batch = static_cast<int>(get_int("train.batch"));
    t.epochs = static_cast<int>(get_int("train.epochs"));
    t.lr_peak = get_double("train.lr_peak");
    t.lr_floor = get_double("train.lr_floor");
    t.warmup_steps = static_cast<int>(get_int("train.warmup"));
    t.weight_decay = get_double("train.weight_decay");
    t.k = static_cast<int>(get_int("train.k"));
    t.m = get_double("train.m");
    t.nq = static_cast<int>(get_int("train.nq"));
    t.nc = static_cast<int>(get_int("train.nc"));
    t.mu = get_double("train.mu");
    t.method = method_from_name(get("train.method"));
    const std::string& mode = get("train.target_mode");
    if (mode == "online")
      t.target_mode = TargetMode::Online;
    else if (mode == "offline")
      t.target_mode = TargetMode::Offline;
    else
      throw std::invalid_argument("train.target_mode must be online or offline");
    t.kl_teacher_tau = get_double("train.kl_teacher_tau");
    t.seed = seed();
    return t;
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

 private:
  static bool affects_training(const std::string& key) {
    if (key == "seed") return true;
    if (key.rfind("eval.", 0) == 0 || key.rfind("ablate.", 0) == 0) return false;
    if (key.rfind("teacher.calib_", 0) == 0) return false;
    return key.rfind("corpus.", 0) == 0 || key.rfind("teacher.", 0) == 0 ||
           key.rfind("train.", 0) == 0 || key.rfind("bank.", 0) == 0;
  }

  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
  }

  std::map<std::string, std::string> kv_;
};

}  // namespace rdl
