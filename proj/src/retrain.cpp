#include "distsearch/retrain.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "distsearch/errors.hpp"
#include "distsearch/text.hpp"
#include "distsearch/theta.hpp"

namespace distsearch {

void RetrainConfig::validate() const {
  if (steps < 1) throw ConfigError("retrain: steps must be >= 1");
  if (batch_size < 1) throw ConfigError("retrain: batch size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("retrain: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("retrain: momentum outside [0,1)");
  if (!std::isfinite(loss.tau)) throw ConfigError("retrain: non-finite clip threshold");
}

std::vector<std::pair<std::string, std::string>> RetrainConfig::snapshot() const {
  return {
      {"steps", std::to_string(steps)},
      {"batch_size", std::to_string(batch_size)},
      {"lr", fmt_double(lr)},
      {"momentum", fmt_double(momentum)},
      {"seed", std::to_string(seed)},
      {"delta_feature", distance_kind_name(loss.delta_feature)},
      {"tau", fmt_double(loss.tau)},
      {"clip", loss.clip ? "true" : "false"},
  };
}

RetrainResult retrain(const Schedule& schedule, const DatasetView& train,
                      const DatasetView& eval, const Network& teacher,
                      const Network& student_init, const PathwaySet& pathway_init,
                      const RetrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw ContractError("retrain: empty training partition");
  if (eval.size() == 0) throw ContractError("retrain: empty evaluation partition");

  // Remap columns onto this pathway set; any id mismatch dies here, before
  // a single parameter moves.
  const Schedule sched = schedule.reordered(pathway_init.ids());
  if (sched.length() != cfg.steps)
    throw ConfigError("retrain: schedule length " + std::to_string(sched.length()) +
                      " != configured steps " + std::to_string(cfg.steps));

  RetrainResult out{student_init.clone(), {}};
  Network& student = out.student;
  student.set_requires_grad(true);
  PathwaySet pathways = pathway_init.clone();
  pathways.set_requires_grad(true);
  ThetaView theta(student, pathways);

  BatchStream stream(train, cfg.batch_size, cfg.seed);
  const int64_t per_epoch = stream.batches_per_epoch();
  std::vector<double> velocity(theta.size(), 0.0);

  RetrainReport& rep = out.report;
  for (int64_t t = 0; t < cfg.steps; ++t) {
    const Batch b = stream.next();
    const double lr_t =
        0.5 * cfg.lr *
        (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(cfg.steps)));
    theta.zero_grads();
    double loss_value = 0.0;
    try {
      const auto teacher_fwd = teacher.forward_with_taps(b.images);
      TrainLossResult res = train_loss_weighted(student, sched.rows[static_cast<size_t>(t)],
                                                sched.raw_rows[static_cast<size_t>(t)], pathways,
                                                teacher_fwd.taps, b, cfg.loss);
      loss_value = res.total.item();
      backward(res.total);
    } catch (const NumericError& e) {
      throw NumericError("retrain: step " + std::to_string(t) + ": " + e.what());
    }
    if (!std::isfinite(loss_value))
      throw NumericError("retrain: non-finite loss at step " + std::to_string(t));
    rep.step_train_loss.push_back(loss_value);
    rep.step_lr.push_back(lr_t);

    const auto g = theta.flat_grads();
    auto p = theta.flatten();
    for (size_t i = 0; i < velocity.size(); ++i) {
      velocity[i] = cfg.momentum * velocity[i] + g[i];
      p[i] -= lr_t * velocity[i];
    }
    theta.assign(p);

    if ((t + 1) % per_epoch == 0) {
      const EvalResult ev = evaluate(student, eval);
      rep.epoch_eval_accuracy.push_back(ev.accuracy);
      rep.epoch_eval_loss.push_back(ev.loss);
    }
  }

  const EvalResult fin = evaluate(student, eval);
  rep.final_accuracy = fin.accuracy;
  rep.final_loss = fin.loss;
  rep.wall_steps = cfg.steps;
  rep.config = cfg.snapshot();
  return out;
}

namespace {

Schedule constant_baseline(const std::vector<std::string>& pathway_ids, int64_t length,
                           double normalized, double raw, const char* tag) {
  Schedule s = constant_schedule(pathway_ids, normalized, raw, length);
  s.metadata.emplace_back("baseline", tag);
  return s;
}

}  // namespace

Schedule equal_weight_schedule(const std::vector<std::string>& pathway_ids, int64_t length) {
  if (pathway_ids.empty()) throw ContractError("equal_weight_schedule: no pathways");
  const double w = 1.0 / static_cast<double>(pathway_ids.size());
  return constant_baseline(pathway_ids, length, w, 1.0, "equal");
}

Schedule zero_weight_schedule(const std::vector<std::string>& pathway_ids, int64_t length) {
  if (pathway_ids.empty()) throw ContractError("zero_weight_schedule: no pathways");
  return constant_baseline(pathway_ids, length, 0.0, 0.0, "none");
}

void save_retrain_report(const RetrainReport& report, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("report: cannot open " + path + " for writing");
  os << "final_accuracy = " << fmt_double(report.final_accuracy) << "\n";
  os << "final_loss = " << fmt_double(report.final_loss) << "\n";
  os << "wall_steps = " << report.wall_steps << "\n";
  for (const auto& [k, v] : report.config) os << k << " = " << v << "\n";
  if (!os) throw FormatError("report: write failed for " + path);

  std::ofstream curves(path + ".curves.csv", std::ios::binary);
  if (!curves) throw FormatError("report: cannot open " + path + ".curves.csv for writing");
  curves << "step,train_loss,lr\n";
  for (size_t t = 0; t < report.step_train_loss.size(); ++t)
    curves << t << "," << fmt_double(report.step_train_loss[t]) << ","
           << fmt_double(report.step_lr[t]) << "\n";
  if (!curves) throw FormatError("report: write failed for " + path + ".curves.csv");

  std::ofstream epochs(path + ".epochs.csv", std::ios::binary);
  if (!epochs) throw FormatError("report: cannot open " + path + ".epochs.csv for writing");
  epochs << "epoch,accuracy,loss\n";
  for (size_t e = 0; e < report.epoch_eval_accuracy.size(); ++e)
    epochs << e << "," << fmt_double(report.epoch_eval_accuracy[e]) << ","
           << fmt_double(report.epoch_eval_loss[e]) << "\n";
  if (!epochs) throw FormatError("report: write failed for " + path + ".epochs.csv");
}

}  // namespace distsearch
