#include "distsearch/losses.hpp"

#include <algorithm>
#include <cmath>

#include "distsearch/counters.hpp"
#include "distsearch/errors.hpp"

namespace distsearch {

std::string norm_strategy_name(NormStrategy s) {
  switch (s) {
    case NormStrategy::BiasedSoftmax: return "biased-softmax";
    case NormStrategy::PlainSoftmax: return "plain-softmax";
    case NormStrategy::L1Plus1: return "l1-plus-1";
    case NormStrategy::L1: return "l1";
    case NormStrategy::Sigmoid: return "sigmoid";
  }
  throw ContractError("norm strategy: unknown enum value");
}

NormStrategy parse_norm_strategy(const std::string& name) {
  if (name == "biased-softmax") return NormStrategy::BiasedSoftmax;
  if (name == "plain-softmax") return NormStrategy::PlainSoftmax;
  if (name == "l1-plus-1") return NormStrategy::L1Plus1;
  if (name == "l1") return NormStrategy::L1;
  if (name == "sigmoid") return NormStrategy::Sigmoid;
  throw ConfigError("unknown normalization strategy '" + name +
                    "' (expected biased-softmax, plain-softmax, l1-plus-1, l1, or sigmoid)");
}

Tensor normalize_alpha_op(const Tensor& raw, NormStrategy strategy, double g) {
  switch (strategy) {
    case NormStrategy::BiasedSoftmax: return biased_softmax(raw, g);
    case NormStrategy::PlainSoftmax: return softmax(raw, 0);
    case NormStrategy::L1Plus1: return l1_normalize(raw, true);
    case NormStrategy::L1: return l1_normalize(raw, false);
    case NormStrategy::Sigmoid: return sigmoid(raw);
  }
  throw ContractError("normalize_alpha_op: unknown strategy");
}

std::vector<double> normalize_alpha(const std::vector<double>& raw, NormStrategy strategy,
                                    double g) {
  // Route through the tensor op so the vector and in-graph paths are
  // bit-identical by construction.
  Tensor t = Tensor::from_vector({static_cast<int64_t>(raw.size())}, raw);
  Tensor y = normalize_alpha_op(t, strategy, g);
  return {y.data().begin(), y.data().end()};
}

std::vector<double> normalize_alpha_vjp(const std::vector<double>& raw, NormStrategy strategy,
                                        double g, const std::vector<double>& upstream) {
  if (raw.size() != upstream.size())
    throw ContractError("normalize_alpha_vjp: cotangent length mismatch");
  const size_t n = raw.size();
  const std::vector<double> y = normalize_alpha(raw, strategy, g);
  std::vector<double> out(n, 0.0);
  switch (strategy) {
    case NormStrategy::BiasedSoftmax:
    case NormStrategy::PlainSoftmax: {
      // dy_i/dx_j = y_i (delta_ij - y_j); the bias entry only shifts the
      // denominator and drops out of the Jacobian.
      double dot = 0.0;
      for (size_t i = 0; i < n; ++i) dot += upstream[i] * y[i];
      for (size_t i = 0; i < n; ++i) out[i] = y[i] * (upstream[i] - dot);
      break;
    }
    case NormStrategy::L1Plus1:
    case NormStrategy::L1: {
      double s = strategy == NormStrategy::L1Plus1 ? 1.0 : 0.0;
      for (double v : raw) s += std::abs(v);
      if (s == 0.0) throw NumericError("normalize_alpha_vjp: zero l1 norm");
      double dot = 0.0;
      for (size_t i = 0; i < n; ++i) dot += upstream[i] * raw[i];
      for (size_t i = 0; i < n; ++i) {
        const double sign = raw[i] > 0.0 ? 1.0 : (raw[i] < 0.0 ? -1.0 : 0.0);
        out[i] = upstream[i] / s - dot * sign / (s * s);
      }
      break;
    }
    case NormStrategy::Sigmoid:
      for (size_t i = 0; i < n; ++i) out[i] = upstream[i] * y[i] * (1.0 - y[i]);
      break;
  }
  return out;
}

AlphaState::AlphaState(std::vector<double> raw, NormStrategy strategy, double g)
    : strategy_(strategy), g_(g) {
  set_raw(std::move(raw));
}

void AlphaState::set_raw(std::vector<double> raw) {
  if (raw.empty()) throw ContractError("alpha state: empty weight vector");
  for (double v : raw)
    if (!std::isfinite(v)) throw NumericError("alpha state: non-finite raw weight");
  raw_ = std::move(raw);
  normalized_ = normalize_alpha(raw_, strategy_, g_);
}

std::vector<bool> active_mask(const std::vector<double>& raw, double tau) {
  if (!std::isfinite(tau)) throw ContractError("active_mask: non-finite threshold");
  std::vector<bool> mask(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) mask[i] = raw[i] > tau;
  return mask;
}

TrainLossResult train_loss(const Network& student, const AlphaState& alpha,
                           const PathwaySet& pathways,
                           const std::vector<Tensor>& teacher_taps, const Batch& batch,
                           const LossSpec& spec) {
  if (alpha.size() != pathways.size())
    throw ContractError("train_loss: " + std::to_string(alpha.size()) + " weights for " +
                        std::to_string(pathways.size()) + " pathways");

  auto fwd = student.forward_with_taps(batch.images);
  Tensor label = cross_entropy(fwd.logits, batch.labels);

  TrainLossResult res;
  res.label_value = label.item();
  if (!std::isfinite(res.label_value))
    throw NumericError("train_loss: non-finite label loss");

  const std::vector<bool> mask = spec.clip
                                     ? active_mask(alpha.raw(), spec.tau)
                                     : std::vector<bool>(pathways.size(), true);
  std::vector<Tensor> terms;
  for (size_t p = 0; p < pathways.size(); ++p) {
    if (!mask[p]) {
      counters().pathway_skips += 1;
      continue;
    }
    Tensor v = pathway_loss(pathways.entries[p], fwd.taps, teacher_taps, spec.delta_feature);
    if (!std::isfinite(v.item()))
      throw NumericError("train_loss: pathway " + pathways.entries[p].id +
                         " produced a non-finite value");
    res.active_indices.push_back(static_cast<int64_t>(p));
    res.pathway_values.push_back(v.item());
    terms.push_back(std::move(v));
  }

  if (terms.empty()) {
    res.total = label;
    return res;
  }

  res.alpha_raw = Tensor::from_vector({static_cast<int64_t>(alpha.size())}, alpha.raw(), true);
  Tensor weights = gather(normalize_alpha_op(res.alpha_raw, alpha.strategy(), alpha.g()),
                          res.active_indices);
  res.total = add(label, weighted_sum(weights, stack_scalars(terms)));
  return res;
}

TrainLossResult train_loss_weighted(const Network& student, const std::vector<double>& normalized,
                                    const std::vector<double>& raw, const PathwaySet& pathways,
                                    const std::vector<Tensor>& teacher_taps, const Batch& batch,
                                    const LossSpec& spec) {
  if (normalized.size() != pathways.size() || raw.size() != pathways.size())
    throw ContractError("train_loss_weighted: row width " + std::to_string(normalized.size()) +
                        "/" + std::to_string(raw.size()) + " for " +
                        std::to_string(pathways.size()) + " pathways");

  auto fwd = student.forward_with_taps(batch.images);
  Tensor label = cross_entropy(fwd.logits, batch.labels);

  TrainLossResult res;
  res.label_value = label.item();
  if (!std::isfinite(res.label_value))
    throw NumericError("train_loss_weighted: non-finite label loss");

  const std::vector<bool> mask =
      spec.clip ? active_mask(raw, spec.tau) : std::vector<bool>(pathways.size(), true);
  std::vector<Tensor> terms;
  for (size_t p = 0; p < pathways.size(); ++p) {
    if (!mask[p]) {
      counters().pathway_skips += 1;
      continue;
    }
    Tensor v = pathway_loss(pathways.entries[p], fwd.taps, teacher_taps, spec.delta_feature);
    if (!std::isfinite(v.item()))
      throw NumericError("train_loss_weighted: pathway " + pathways.entries[p].id +
                         " produced a non-finite value");
    res.active_indices.push_back(static_cast<int64_t>(p));
    res.pathway_values.push_back(v.item());
    terms.push_back(std::move(v));
  }

  if (terms.empty()) {
    res.total = label;
    return res;
  }

  Tensor weights = gather(
      Tensor::from_vector({static_cast<int64_t>(normalized.size())}, normalized, false),
      res.active_indices);
  res.total = add(label, weighted_sum(weights, stack_scalars(terms)));
  return res;
}

Tensor val_loss(const Network& student, const Batch& batch) {
  Tensor loss = cross_entropy(student.forward(batch.images), batch.labels);
  if (!std::isfinite(loss.item())) throw NumericError("val_loss: non-finite loss");
  return loss;
}

}  // namespace distsearch
