#pragma once

#include <string>
#include <vector>

#include "distsearch/data.hpp"
#include "distsearch/network.hpp"
#include "distsearch/pathway.hpp"
#include "distsearch/tensor.hpp"

namespace distsearch {

// The five normalization ablations for the pathway weights.
enum class NormStrategy { BiasedSoftmax, PlainSoftmax, L1Plus1, L1, Sigmoid };

std::string norm_strategy_name(NormStrategy s);
NormStrategy parse_norm_strategy(const std::string& name);

// Pure normalization of raw weights; g is only used by biased-softmax, where
// it acts as the logit of a phantom entry that keeps the sum below one.
std::vector<double> normalize_alpha(const std::vector<double>& raw, NormStrategy strategy,
                                    double g);
// In-graph variant (differentiable through the chosen normalization).
Tensor normalize_alpha_op(const Tensor& raw, NormStrategy strategy, double g);
// Hand-coded vector-Jacobian product dual to normalize_alpha_op's backward;
// lets gradient-free callers pull a cotangent back without touching the graph
// machinery (and therefore without counting a backward pass).
std::vector<double> normalize_alpha_vjp(const std::vector<double>& raw, NormStrategy strategy,
                                        double g, const std::vector<double>& upstream);

// Raw pathway weights plus their normalization, kept consistent by
// construction: `normalized` is recomputed on every raw update.
class AlphaState {
 public:
  AlphaState(std::vector<double> raw, NormStrategy strategy, double g);

  const std::vector<double>& raw() const { return raw_; }
  const std::vector<double>& normalized() const { return normalized_; }
  NormStrategy strategy() const { return strategy_; }
  double g() const { return g_; }
  size_t size() const { return raw_.size(); }

  void set_raw(std::vector<double> raw);

 private:
  std::vector<double> raw_;
  std::vector<double> normalized_;
  NormStrategy strategy_;
  double g_;
};

struct LossSpec {
  // delta_label is cross-entropy for this classification artifact.
  DistanceKind delta_feature = DistanceKind::L2;
  double tau = 0.5;  // clip threshold on RAW weights
  bool clip = true;
};

// mask[p] = raw[p] > tau. Clipped pathways are skipped entirely by train_loss
// (no transform forward, no loss term), but their raw entries still feed the
// normalization denominator so surviving weights are unchanged by clipping.
std::vector<bool> active_mask(const std::vector<double>& raw, double tau);

struct TrainLossResult {
  Tensor total;       // scalar; label term plus weighted active pathway terms
  Tensor alpha_raw;   // leaf tensor of raw weights used in the graph (has grad
                      // after backward when any pathway is active)
  double label_value = 0.0;
  std::vector<int64_t> active_indices;   // pathways that were evaluated
  std::vector<double> pathway_values;    // loss value per active pathway
};

// Training objective: mean label loss over the batch plus the
// normalized-weighted sum of active pathway distances. Teacher taps are
// precomputed constants (one teacher forward, reused by every caller).
TrainLossResult train_loss(const Network& student, const AlphaState& alpha,
                           const PathwaySet& pathways,
                           const std::vector<Tensor>& teacher_taps, const Batch& batch,
                           const LossSpec& spec);

// Retrain-phase objective: identical decomposition, but the weights come from
// a schedule row and enter as constants (no weight gradient). `raw` drives the
// clip mask exactly as the live raw weights do during search; alpha_raw in the
// result stays empty.
TrainLossResult train_loss_weighted(const Network& student, const std::vector<double>& normalized,
                                    const std::vector<double>& raw, const PathwaySet& pathways,
                                    const std::vector<Tensor>& teacher_taps, const Batch& batch,
                                    const LossSpec& spec);

// Plain mean label loss; no pathway terms, no alpha dependence.
Tensor val_loss(const Network& student, const Batch& batch);

}  // namespace distsearch
