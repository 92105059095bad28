#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "distsearch/losses.hpp"
#include "distsearch/meta_search.hpp"
#include "distsearch/retrain.hpp"

namespace distsearch {

// Flat key=value run configuration shared by every CLI subcommand. One file
// (or --set override) drives the whole workflow; unknown keys are rejected,
// and every run re-emits the fully resolved table next to its outputs so a
// run is reconstructible from its artifacts alone.
//
// String values may contain the token "<out>", replaced by the output
// directory at use time (never in the resolved file, which stays relocatable).
struct RunConfig {
  uint64_t seed = 0;

  std::string data_path = "<out>/data.dpds";
  int64_t data_n = 512;
  int64_t data_classes = 4;
  double data_sigma = 0.3;
  int64_t data_h = 16;
  int64_t data_w = 16;
  double split_ratio = 0.8;

  std::string teacher_spec;  // canonical architecture text; defaulted in ctor
  std::string teacher_path = "<out>/teacher.dpck";
  int64_t teacher_epochs = 6;
  double teacher_lr = 0.1;
  int64_t teacher_batch = 32;

  std::string student_spec;
  std::string pathway_kinds;  // comma list; empty = all transform kinds

  int64_t search_steps = 40;
  double search_gamma = 0.05;
  double search_xi = 0.1;
  EpsilonMode search_epsilon_mode = EpsilonMode::Scaled;
  double search_epsilon = 0.01;
  double search_g = 1.0;
  double search_tau = 0.5;
  bool search_clip = true;
  NormStrategy search_strategy = NormStrategy::BiasedSoftmax;
  DistanceKind search_delta = DistanceKind::L2;
  int64_t search_batch = 64;
  std::string schedule_path = "<out>/schedule.csv";

  int64_t retrain_steps = 160;
  int64_t retrain_batch = 64;
  double retrain_lr = 0.05;
  double retrain_momentum = 0.9;
  std::string retrain_baseline = "schedule";  // schedule | equal | none

  std::string eval_checkpoint = "<out>/student.dpck";
  std::string eval_on = "val";  // train | val | all
  int64_t eval_batch = 256;

  int64_t check_warm_steps = 32;
  int64_t check_train_batch = 64;  // 0 = full training partition
  int64_t check_val_batch = 32;    // 0 = full validation partition
  double check_h = 1e-4;
  double check_rel_tol = 1e-3;
  double check_cos_tol = 0.999;
  double check_floor = 1e-8;

  RunConfig();

  // key=value lines, '#' starts a comment, blank lines ignored. Unknown or
  // duplicate keys throw ConfigError naming file and line.
  static RunConfig load(const std::string& path);

  void set_key(const std::string& key, const std::string& value);  // ConfigError on unknown
  std::string get_key(const std::string& key) const;
  void apply_override(const std::string& assignment);  // --set "key=value"

  std::string resolved_text() const;  // every key, fixed order
  void save(const std::string& path) const;

  void validate() const;  // cross-field checks; sub-configs validate on build

  SearchConfig search_config() const;
  RetrainConfig retrain_config() const;
  LossSpec loss_spec() const;

  static std::vector<std::string> known_keys();
  static std::string substitute_out(const std::string& value, const std::string& out_dir);
};

}  // namespace distsearch
