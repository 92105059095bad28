#include "distsearch/meta_search.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>

#include "distsearch/errors.hpp"
#include "distsearch/text.hpp"

namespace distsearch {

namespace {

constexpr uint64_t kTrainStreamSalt = 0x747261696e737472ULL;
constexpr uint64_t kValStreamSalt = 0x76616c2d73747265ULL;

void check_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value");
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Restores theta on scope exit so hypergradient never leaks its probes.
struct ThetaRestore {
  BilevelProblem& problem;
  const std::vector<double>& saved;
  ~ThetaRestore() { problem.set_theta(saved); }
};

}  // namespace

std::string epsilon_mode_name(EpsilonMode m) {
  return m == EpsilonMode::Fixed ? "fixed" : "scaled";
}

EpsilonMode parse_epsilon_mode(const std::string& name) {
  if (name == "fixed") return EpsilonMode::Fixed;
  if (name == "scaled") return EpsilonMode::Scaled;
  throw ConfigError("unknown epsilon mode '" + name + "' (fixed|scaled)");
}

void SearchConfig::validate() const {
  // gamma = 0 (frozen alpha) and xi = 0 (frozen theta) are degenerate but
  // well-defined runs, so only negatives are rejected.
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be >= 0");
  if (!(xi >= 0.0) || !std::isfinite(xi)) throw ConfigError("xi must be >= 0");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be > 0");
  if (!std::isfinite(g)) throw ConfigError("g must be finite");
  if (!std::isfinite(tau)) throw ConfigError("tau must be finite");
  if (search_steps < 0) throw ConfigError("search_steps must be >= 0");
  if (retrain_steps < search_steps)
    throw ConfigError("retrain_steps must be >= search_steps");
  if (!(split_ratio > 0.0 && split_ratio < 1.0))
    throw ConfigError("split_ratio must lie strictly between 0 and 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

std::vector<std::pair<std::string, std::string>> SearchConfig::snapshot() const {
  return {
      {"gamma", fmt_double(gamma)},
      {"xi", fmt_double(xi)},
      {"epsilon_mode", epsilon_mode_name(epsilon_mode)},
      {"epsilon", fmt_double(epsilon)},
      {"g", fmt_double(g)},
      {"tau", fmt_double(tau)},
      {"search_steps", std::to_string(search_steps)},
      {"retrain_steps", std::to_string(retrain_steps)},
      {"split_ratio", fmt_double(split_ratio)},
      {"batch_size", std::to_string(batch_size)},
      {"seed", std::to_string(seed)},
      {"strategy", norm_strategy_name(strategy)},
      {"distance", distance_kind_name(delta_feature)},
      {"clip", clip ? "true" : "false"},
  };
}

void QuadraticBilevelProblem::set_theta(const std::vector<double>& values) {
  if (values.size() != 1) throw ContractError("quadratic problem: theta is a scalar");
  theta_ = values[0];
}

double QuadraticBilevelProblem::train_value(const AlphaState& alpha) {
  const double d = theta_ - alpha.raw()[0];
  return 0.5 * d * d;
}

std::vector<double> QuadraticBilevelProblem::grad_train_theta(const AlphaState& alpha,
                                                              double* value) {
  const double d = theta_ - alpha.raw()[0];
  if (value) *value = 0.5 * d * d;
  return {d};
}

std::vector<double> QuadraticBilevelProblem::grad_val_theta(double* value) {
  if (value) *value = 0.5 * theta_ * theta_;
  return {theta_};
}

std::vector<double> QuadraticBilevelProblem::grad_train_alpha(const AlphaState& alpha) {
  return {alpha.raw()[0] - theta_};
}

KDBilevelProblem::KDBilevelProblem(Network& student, Network& teacher, PathwaySet& pathways,
                                   const LossSpec& loss)
    : student_(student), teacher_(teacher), pathways_(pathways), loss_(loss),
      theta_(student, pathways) {
  if (pathways_.size() == 0) throw ContractError("bilevel problem: empty pathway set");
}

void KDBilevelProblem::set_batches(Batch train, Batch val) {
  train_batch_ = std::move(train);
  val_batch_ = std::move(val);
  has_batches_ = true;
  taps_ready_ = false;
}

const std::vector<Tensor>& KDBilevelProblem::teacher_taps() {
  if (!has_batches_) throw ContractError("bilevel problem: batches not set");
  if (!taps_ready_) {
    taps_ = teacher_.forward_with_taps(train_batch_.images).taps;
    taps_ready_ = true;
  }
  return taps_;
}

double KDBilevelProblem::train_value(const AlphaState& alpha) {
  return train_loss(student_, alpha, pathways_, teacher_taps(), train_batch_, loss_)
      .total.item();
}

double KDBilevelProblem::val_value() {
  if (!has_batches_) throw ContractError("bilevel problem: batches not set");
  return val_loss(student_, val_batch_).item();
}

std::vector<double> KDBilevelProblem::grad_train_theta(const AlphaState& alpha,
                                                       double* value) {
  auto res = train_loss(student_, alpha, pathways_, teacher_taps(), train_batch_, loss_);
  if (value) *value = res.total.item();
  theta_.zero_grads();
  backward(res.total);
  return theta_.flat_grads();
}

std::vector<double> KDBilevelProblem::grad_val_theta(double* value) {
  if (!has_batches_) throw ContractError("bilevel problem: batches not set");
  Tensor loss = val_loss(student_, val_batch_);
  if (value) *value = loss.item();
  theta_.zero_grads();
  backward(loss);
  return theta_.flat_grads();
}

std::vector<double> KDBilevelProblem::grad_train_alpha(const AlphaState& alpha) {
  auto res = train_loss(student_, alpha, pathways_, teacher_taps(), train_batch_, loss_);
  // Cotangent of the normalized weights: the active pathway loss values, zero
  // for clipped pathways. Pulled back by hand, so no backward pass is spent.
  std::vector<double> upstream(pathways_.size(), 0.0);
  for (size_t i = 0; i < res.active_indices.size(); ++i)
    upstream[static_cast<size_t>(res.active_indices[i])] = res.pathway_values[i];
  return normalize_alpha_vjp(alpha.raw(), alpha.strategy(), alpha.g(), upstream);
}

std::vector<double> hypergradient(BilevelProblem& problem, const AlphaState& alpha,
                                  const SearchConfig& cfg, HypergradientInfo* info) {
  if (alpha.size() != problem.alpha_size())
    throw ContractError("hypergradient: alpha size mismatch");

  const std::vector<double> theta0 = problem.theta();
  ThetaRestore restore{problem, theta0};

  double train_v = 0.0;
  const auto g_train = problem.grad_train_theta(alpha, &train_v);
  check_finite(g_train, "hypergradient: train gradient");

  std::vector<double> theta1(theta0.size());
  for (size_t i = 0; i < theta0.size(); ++i) theta1[i] = theta0[i] - cfg.xi * g_train[i];
  problem.set_theta(theta1);

  double val_v = 0.0;
  const auto g_val = problem.grad_val_theta(&val_v);
  check_finite(g_val, "hypergradient: validation gradient");
  const double norm = l2_norm(g_val);

  if (info) {
    info->train_value = train_v;
    info->val_value = val_v;
    info->val_grad_norm = norm;
    info->epsilon = 0.0;
  }

  if (norm == 0.0) return std::vector<double>(alpha.size(), 0.0);  // stationary inner point

  const double eps =
      cfg.epsilon_mode == EpsilonMode::Fixed ? cfg.epsilon : cfg.epsilon / norm;
  if (!std::isfinite(eps) || eps <= 0.0)
    throw NumericError("hypergradient: degenerate probe size " + fmt_double(eps));
  if (info) info->epsilon = eps;

  std::vector<double> probe(theta0.size());
  for (size_t i = 0; i < theta0.size(); ++i) probe[i] = theta0[i] + eps * g_val[i];
  problem.set_theta(probe);
  const auto g_plus = problem.grad_train_alpha(alpha);

  for (size_t i = 0; i < theta0.size(); ++i) probe[i] = theta0[i] - eps * g_val[i];
  problem.set_theta(probe);
  const auto g_minus = problem.grad_train_alpha(alpha);

  std::vector<double> hg(alpha.size());
  for (size_t p = 0; p < hg.size(); ++p)
    hg[p] = -cfg.xi * (g_plus[p] - g_minus[p]) / (2.0 * eps);
  check_finite(hg, "hypergradient: result");
  return hg;
}

double inner_step(BilevelProblem& problem, const AlphaState& alpha, double xi) {
  double value = 0.0;
  const auto grad = problem.grad_train_theta(alpha, &value);
  check_finite(grad, "inner step: gradient");
  if (xi == 0.0) return value;  // exact no-op, theta untouched
  auto theta = problem.theta();
  for (size_t i = 0; i < theta.size(); ++i) theta[i] -= xi * grad[i];
  problem.set_theta(theta);
  return value;
}

Schedule search(const SearchConfig& cfg, const DatasetSplit& split, Network& teacher,
                Network& student, PathwaySet& pathways, std::ostream* log,
                SearchTrace* trace) {
  cfg.validate();
  if (pathways.size() == 0) throw ContractError("search: empty pathway set");

  LossSpec loss;
  loss.delta_feature = cfg.delta_feature;
  loss.tau = cfg.tau;
  loss.clip = cfg.clip;
  KDBilevelProblem problem(student, teacher, pathways, loss);

  BatchStream train_stream(split.train(), cfg.batch_size, cfg.seed ^ kTrainStreamSalt);
  BatchStream val_stream(split.val(), cfg.batch_size, cfg.seed ^ kValStreamSalt);

  Schedule sched;
  sched.pathway_ids = pathways.ids();
  sched.metadata = cfg.snapshot();
  if (trace) trace->partial = sched;

  std::vector<double> raw(pathways.size(), 1.0);  // all-ones initial raw alpha

  auto note = [&](const char* kind, int64_t t) {
    if (trace) trace->events.push_back({kind, t});
  };

  for (int64_t t = 0; t < cfg.search_steps; ++t) {
    problem.set_batches(train_stream.next(), val_stream.next());

    AlphaState alpha(raw, cfg.strategy, cfg.g);
    const EvalCounters before = counters();
    HypergradientInfo info;
    std::vector<double> hg;
    try {
      hg = hypergradient(problem, alpha, cfg, &info);
    } catch (const NumericError& e) {
      throw NumericError("search step " + std::to_string(t) + ": " + e.what());
    }
    const EvalCounters after = counters();
    note("hypergradient", t);

    for (size_t p = 0; p < raw.size(); ++p) raw[p] -= cfg.gamma * hg[p];
    AlphaState updated(raw, cfg.strategy, cfg.g);
    note("alpha_update", t);

    sched.rows.push_back(updated.normalized());
    sched.raw_rows.push_back(raw);
    if (trace) {
      trace->partial.rows.push_back(updated.normalized());
      trace->partial.raw_rows.push_back(raw);
    }
    note("push_row", t);

    double train_v = 0.0;
    try {
      train_v = inner_step(problem, updated, cfg.xi);
    } catch (const NumericError& e) {
      throw NumericError("search step " + std::to_string(t) + ": " + e.what());
    }
    note("inner_step", t);

    int64_t active = static_cast<int64_t>(raw.size());
    if (cfg.clip) {
      active = 0;
      for (double r : raw) active += r > cfg.tau ? 1 : 0;
    }
    const auto [mn, mx] =
        std::minmax_element(updated.normalized().begin(), updated.normalized().end());

    if (log)
      *log << "step=" << t << " train_loss=" << fmt_double(train_v) << " val_loss="
           << fmt_double(info.val_value) << " active=" << active << " alpha_max=" << fmt_double(*mx)
           << " alpha_min=" << fmt_double(*mn) << "\n";

    if (trace) {
      SearchStepStat stat;
      stat.step = t;
      stat.train_value = train_v;
      stat.val_value = info.val_value;
      stat.epsilon = info.epsilon;
      stat.val_grad_norm = info.val_grad_norm;
      stat.active_count = active;
      stat.alpha_max = *mx;
      stat.alpha_min = *mn;
      stat.hg_teacher_forwards = after.forward_teacher - before.forward_teacher;
      stat.hg_student_forwards = after.forward_student - before.forward_student;
      stat.hg_backward_passes = after.backward_passes - before.backward_passes;
      stat.hypergrad = hg;
      trace->steps.push_back(std::move(stat));
    }
  }
  return sched;
}

}  // namespace distsearch
