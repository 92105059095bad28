#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "distsearch/counters.hpp"
#include "distsearch/losses.hpp"
#include "distsearch/schedule.hpp"
#include "distsearch/theta.hpp"

namespace distsearch {

// How to pick the finite-difference probe size when perturbing theta along
// the validation gradient: a fixed value, or c / ||grad_val|| (the usual
// scaling for this family of second-order approximations).
enum class EpsilonMode { Fixed, Scaled };

std::string epsilon_mode_name(EpsilonMode m);
EpsilonMode parse_epsilon_mode(const std::string& name);

struct SearchConfig {
  double gamma = 0.05;  // meta learning rate on raw alpha
  double xi = 0.1;      // inner learning rate on theta
  EpsilonMode epsilon_mode = EpsilonMode::Scaled;
  double epsilon = 0.01;  // probe size (fixed) or scaling constant c (scaled)
  double g = 1.0;         // biased-softmax phantom logit
  double tau = 0.5;       // clip threshold on raw alpha
  int64_t search_steps = 40;    // meta-optimization steps (schedule length)
  int64_t retrain_steps = 160;  // steps the schedule will be expanded to
  double split_ratio = 0.8;     // train share of the search split
  int64_t batch_size = 64;
  uint64_t seed = 0;
  NormStrategy strategy = NormStrategy::BiasedSoftmax;
  DistanceKind delta_feature = DistanceKind::L2;
  bool clip = true;

  void validate() const;  // throws ConfigError
  std::vector<std::pair<std::string, std::string>> snapshot() const;
};

// A bilevel problem seen through a flat inner parameter vector theta and a
// vector of raw meta-weights. The knowledge-distillation instance and the
// closed-form toys below share the hypergradient code through this interface.
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual size_t theta_size() const = 0;
  virtual size_t alpha_size() const = 0;

  virtual std::vector<double> theta() const = 0;
  virtual void set_theta(const std::vector<double>& values) = 0;

  virtual double train_value(const AlphaState& alpha) = 0;
  virtual double val_value() = 0;

  // d train / d theta at the current theta; optionally reports the loss value.
  virtual std::vector<double> grad_train_theta(const AlphaState& alpha,
                                               double* value = nullptr) = 0;
  // d val / d theta at the current theta.
  virtual std::vector<double> grad_val_theta(double* value = nullptr) = 0;
  // d train / d raw alpha at the current theta. Implementations must not run
  // a backward pass for this (the distillation instance pulls the cotangent
  // through the normalization by hand).
  virtual std::vector<double> grad_train_alpha(const AlphaState& alpha) = 0;
};

// train = 1/2 (theta - alpha)^2, val = 1/2 theta^2, scalar theta. The meta
// parameter enters raw (no normalization), which makes every quantity of the
// meta-gradient available in closed form.
class QuadraticBilevelProblem final : public BilevelProblem {
 public:
  explicit QuadraticBilevelProblem(double theta0) : theta_(theta0) {}

  size_t theta_size() const override { return 1; }
  size_t alpha_size() const override { return 1; }
  std::vector<double> theta() const override { return {theta_}; }
  void set_theta(const std::vector<double>& values) override;
  double train_value(const AlphaState& alpha) override;
  double val_value() override { return 0.5 * theta_ * theta_; }
  std::vector<double> grad_train_theta(const AlphaState& alpha, double* value) override;
  std::vector<double> grad_val_theta(double* value) override;
  std::vector<double> grad_train_alpha(const AlphaState& alpha) override;

 private:
  double theta_ = 0.0;
};

// The real instance: theta = student + transform parameters, meta-weights
// normalized inside the train loss. Teacher taps for the current train batch
// are computed once and reused by every train-side evaluation (the teacher
// depends on neither theta nor alpha).
class KDBilevelProblem final : public BilevelProblem {
 public:
  KDBilevelProblem(Network& student, Network& teacher, PathwaySet& pathways,
                   const LossSpec& loss);

  void set_batches(Batch train, Batch val);

  size_t theta_size() const override { return theta_.size(); }
  size_t alpha_size() const override { return pathways_.size(); }
  std::vector<double> theta() const override { return theta_.flatten(); }
  void set_theta(const std::vector<double>& values) override { theta_.assign(values); }
  double train_value(const AlphaState& alpha) override;
  double val_value() override;
  std::vector<double> grad_train_theta(const AlphaState& alpha, double* value) override;
  std::vector<double> grad_val_theta(double* value) override;
  std::vector<double> grad_train_alpha(const AlphaState& alpha) override;

 private:
  const std::vector<Tensor>& teacher_taps();

  Network& student_;
  Network& teacher_;
  PathwaySet& pathways_;
  LossSpec loss_;
  ThetaView theta_;
  Batch train_batch_, val_batch_;
  std::vector<Tensor> taps_;
  bool has_batches_ = false;
  bool taps_ready_ = false;
};

struct HypergradientInfo {
  double train_value = 0.0;
  double val_value = 0.0;
  double epsilon = 0.0;        // 0 when the zero-gradient guard fired
  double val_grad_norm = 0.0;
};

// Meta-gradient of the validation loss with respect to raw alpha through one
// inner SGD step, by symmetric finite differences along the validation
// gradient:
//   theta1   = theta - xi * d train(theta, alpha) / d theta
//   theta+/- = theta +/- eps * d val(theta1) / d theta
//   result   = -xi * (g+ - g-) / (2 eps),  g+/- = d train(theta+/-, alpha) / d alpha
// theta is restored bit-for-bit before returning (also on error). Cost on the
// distillation instance: one teacher forward, four student forwards, two
// student backwards. A zero validation gradient returns the zero vector.
std::vector<double> hypergradient(BilevelProblem& problem, const AlphaState& alpha,
                                  const SearchConfig& cfg,
                                  HypergradientInfo* info = nullptr);

// One plain SGD step on theta under the (clip-masked) train loss. Returns the
// loss value at the pre-step theta. xi = 0 leaves theta untouched.
double inner_step(BilevelProblem& problem, const AlphaState& alpha, double xi);

struct SearchEvent {
  std::string kind;  // hypergradient | alpha_update | push_row | inner_step
  int64_t step = 0;
};

struct SearchStepStat {
  int64_t step = 0;
  double train_value = 0.0;
  double val_value = 0.0;
  double epsilon = 0.0;
  double val_grad_norm = 0.0;
  int64_t active_count = 0;
  double alpha_max = 0.0;
  double alpha_min = 0.0;
  // counter deltas measured around the hypergradient call
  int64_t hg_teacher_forwards = 0;
  int64_t hg_student_forwards = 0;
  int64_t hg_backward_passes = 0;
  std::vector<double> hypergrad;
};

struct SearchTrace {
  std::vector<SearchStepStat> steps;
  std::vector<SearchEvent> events;
  Schedule partial;  // rows recorded so far; complete on success
};

// Meta-optimization loop: per step, update raw alpha by the hypergradient,
// record the normalized row, then take the inner step on theta. Starts from
// all-ones raw alpha. Numeric failures carry the step index; rows recorded
// before the failure survive in *trace.
Schedule search(const SearchConfig& cfg, const DatasetSplit& split, Network& teacher,
                Network& student, PathwaySet& pathways, std::ostream* log = nullptr,
                SearchTrace* trace = nullptr);

}  // namespace distsearch
