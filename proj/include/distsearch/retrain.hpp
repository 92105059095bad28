#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "distsearch/data.hpp"
#include "distsearch/losses.hpp"
#include "distsearch/network.hpp"
#include "distsearch/pathway.hpp"
#include "distsearch/schedule.hpp"

namespace distsearch {

struct RetrainConfig {
  int64_t steps = 160;
  int64_t batch_size = 64;
  double lr = 0.05;       // peak rate; decays to ~0 on a half cosine
  double momentum = 0.9;
  uint64_t seed = 0;
  LossSpec loss;

  void validate() const;  // throws ConfigError
  std::vector<std::pair<std::string, std::string>> snapshot() const;
};

struct RetrainReport {
  std::vector<double> step_train_loss;      // one entry per step
  std::vector<double> step_lr;
  std::vector<double> epoch_eval_accuracy;  // one entry per completed epoch
  std::vector<double> epoch_eval_loss;
  double final_accuracy = 0.0;
  double final_loss = 0.0;
  int64_t wall_steps = 0;
  std::vector<std::pair<std::string, std::string>> config;
};

struct RetrainResult {
  Network student;
  RetrainReport report;
};

// Second phase: trains a fresh student (and its transform blocks) under a
// fixed per-step weight schedule with momentum SGD and cosine learning-rate
// decay. The schedule must already have length cfg.steps and cover exactly
// the given pathways (any column order); mismatches throw ConfigError before
// any parameter moves. Inputs are cloned — the caller's student, pathways and
// teacher are untouched. Bit-reproducible for identical inputs.
RetrainResult retrain(const Schedule& schedule, const DatasetView& train,
                      const DatasetView& eval, const Network& teacher,
                      const Network& student_init, const PathwaySet& pathway_init,
                      const RetrainConfig& cfg);

// Baseline schedules sharing the retrain loop: uniform 1/P weights with raw
// values above the clip threshold ("equal"), and all-zero weights whose raw
// values sit below it, which reduces retrain to plain supervised training
// ("none").
Schedule equal_weight_schedule(const std::vector<std::string>& pathway_ids, int64_t length);
Schedule zero_weight_schedule(const std::vector<std::string>& pathway_ids, int64_t length);

// key=value summary at `path`, per-step curves at `path`.curves.csv and
// per-epoch curves at `path`.epochs.csv. No timestamps; byte-stable.
void save_retrain_report(const RetrainReport& report, const std::string& path);

}  // namespace distsearch
