#pragma once

#include <string>
#include <vector>

#include "distsearch/meta_search.hpp"
#include "distsearch/tensor.hpp"

namespace distsearch {

// Brute-force references for the test suite and the check-hypergrad command.
// Nothing here shares machinery with the code under test: the meta-gradient
// is taken by direct perturbation of raw alpha, the convolution by literal
// six-loop summation.

// d val(theta after one exact inner SGD step) / d raw alpha, component by
// component: perturb raw alpha by +/- h, replay the inner step from the same
// theta, and difference the validation losses. No curvature approximation is
// involved, so this is exact up to O(h^2).
std::vector<double> brute_force_hypergradient(BilevelProblem& problem,
                                              const AlphaState& alpha, double xi,
                                              double h = 1e-4);

struct OracleComponent {
  double approx = 0.0;
  double exact = 0.0;
  double abs_err = 0.0;
  double rel_err = 0.0;  // |approx - exact| / max(|exact|, floor)
};

struct OracleReport {
  std::vector<OracleComponent> components;
  double cosine = 0.0;
  double max_rel_err = 0.0;
  double rel_tol = 0.0;
  double cos_tol = 0.0;
  double floor = 0.0;
  bool pass = false;

  std::string summary() const;  // printable table plus the verdict line
};

// Componentwise comparison with a magnitude floor: components whose oracle
// value sits below the floor are reported but not held to the relative bound.
OracleReport compare_hypergradient(const std::vector<double>& approx,
                                   const std::vector<double>& oracle, double rel_tol = 1e-3,
                                   double cos_tol = 0.999, double floor = 1e-8);

// Probe-size sensitivity: one comparison per (h, epsilon) pair, same batches.
struct SweepPoint {
  double h = 0.0;
  double epsilon = 0.0;
  double cosine = 0.0;
  double max_rel_err = 0.0;
};

std::vector<SweepPoint> hypergrad_sweep(BilevelProblem& problem, const AlphaState& alpha,
                                        const SearchConfig& base,
                                        const std::vector<double>& hs,
                                        const std::vector<double>& epsilons);

// Direct six-loop convolution over (N,Cin,H,W) x (Cout,Cin,K,K) with zero
// padding; returns a graph-free tensor.
Tensor naive_conv(const Tensor& input, const Tensor& kernel, int64_t stride, int64_t pad);

}  // namespace distsearch
