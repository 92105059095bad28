#include "distsearch/oracle.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "distsearch/errors.hpp"
#include "distsearch/text.hpp"

namespace distsearch {

namespace {

double val_after_inner_step(BilevelProblem& problem, const std::vector<double>& theta0,
                            const AlphaState& alpha, double xi) {
  problem.set_theta(theta0);
  const auto grad = problem.grad_train_theta(alpha, nullptr);
  std::vector<double> theta1(theta0.size());
  for (size_t i = 0; i < theta0.size(); ++i) theta1[i] = theta0[i] - xi * grad[i];
  problem.set_theta(theta1);
  return problem.val_value();
}

}  // namespace

std::vector<double> brute_force_hypergradient(BilevelProblem& problem,
                                              const AlphaState& alpha, double xi, double h) {
  if (!(h > 0.0) || !std::isfinite(h))
    throw ContractError("brute-force hypergradient: h must be positive");
  if (alpha.size() != problem.alpha_size())
    throw ContractError("brute-force hypergradient: alpha size mismatch");

  const std::vector<double> theta0 = problem.theta();
  std::vector<double> out(alpha.size());
  std::vector<double> raw = alpha.raw();
  for (size_t p = 0; p < raw.size(); ++p) {
    const double keep = raw[p];
    raw[p] = keep + h;
    const double up =
        val_after_inner_step(problem, theta0, AlphaState(raw, alpha.strategy(), alpha.g()), xi);
    raw[p] = keep - h;
    const double down =
        val_after_inner_step(problem, theta0, AlphaState(raw, alpha.strategy(), alpha.g()), xi);
    raw[p] = keep;
    out[p] = (up - down) / (2.0 * h);
    if (!std::isfinite(out[p]))
      throw NumericError("brute-force hypergradient: non-finite component " +
                         std::to_string(p));
  }
  problem.set_theta(theta0);
  return out;
}

OracleReport compare_hypergradient(const std::vector<double>& approx,
                                   const std::vector<double>& oracle, double rel_tol,
                                   double cos_tol, double floor) {
  if (approx.size() != oracle.size())
    throw ContractError("oracle comparison: vector lengths differ");
  if (approx.empty()) throw ContractError("oracle comparison: empty vectors");

  OracleReport rep;
  rep.rel_tol = rel_tol;
  rep.cos_tol = cos_tol;
  rep.floor = floor;

  double dot = 0.0, na = 0.0, nb = 0.0;
  bool rel_ok = true;
  for (size_t i = 0; i < approx.size(); ++i) {
    OracleComponent c;
    c.approx = approx[i];
    c.exact = oracle[i];
    c.abs_err = std::abs(approx[i] - oracle[i]);
    c.rel_err = c.abs_err / std::max(std::abs(oracle[i]), floor);
    if (std::abs(oracle[i]) > floor) {
      rep.max_rel_err = std::max(rep.max_rel_err, c.rel_err);
      if (c.rel_err >= rel_tol) rel_ok = false;
    }
    dot += approx[i] * oracle[i];
    na += approx[i] * approx[i];
    nb += oracle[i] * oracle[i];
    rep.components.push_back(c);
  }
  rep.cosine = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
  rep.pass = rel_ok && rep.cosine > cos_tol;
  return rep;
}

std::string OracleReport::summary() const {
  std::ostringstream out;
  out << "component,approx,oracle,abs_err,rel_err\n";
  for (size_t i = 0; i < components.size(); ++i) {
    const auto& c = components[i];
    out << i << "," << fmt_double(c.approx) << "," << fmt_double(c.exact) << "," << fmt_double(c.abs_err) << ","
        << fmt_double(c.rel_err) << "\n";
  }
  out << "cosine=" << fmt_double(cosine) << " max_rel_err=" << fmt_double(max_rel_err) << " rel_tol="
      << fmt_double(rel_tol) << " cos_tol=" << fmt_double(cos_tol) << " floor=" << fmt_double(floor)
      << " verdict=" << (pass ? "pass" : "fail") << "\n";
  return out.str();
}

std::vector<SweepPoint> hypergrad_sweep(BilevelProblem& problem, const AlphaState& alpha,
                                        const SearchConfig& base,
                                        const std::vector<double>& hs,
                                        const std::vector<double>& epsilons) {
  std::vector<SweepPoint> points;
  for (double h : hs) {
    const auto oracle = brute_force_hypergradient(problem, alpha, base.xi, h);
    for (double eps : epsilons) {
      SearchConfig cfg = base;
      cfg.epsilon = eps;
      const auto approx = hypergradient(problem, alpha, cfg);
      const auto rep = compare_hypergradient(approx, oracle);
      points.push_back({h, eps, rep.cosine, rep.max_rel_err});
    }
  }
  return points;
}

Tensor naive_conv(const Tensor& input, const Tensor& kernel, int64_t stride, int64_t pad) {
  if (input.shape().size() != 4 || kernel.shape().size() != 4)
    throw ShapeError("naive_conv expects (N,C,H,W) input and (O,C,K,K) kernel");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  if (is[1] != ks[1]) throw ShapeError("naive_conv: channel mismatch");
  if (stride < 1 || pad < 0) throw ShapeError("naive_conv: bad stride or padding");
  const int64_t n = is[0], cin = is[1], h = is[2], w = is[3];
  const int64_t cout = ks[0], k = ks[2];
  if (ks[3] != k) throw ShapeError("naive_conv: kernel must be square");
  const int64_t oh = (h + 2 * pad - k) / stride + 1;
  const int64_t ow = (w + 2 * pad - k) / stride + 1;
  if (oh < 1 || ow < 1) throw ShapeError("naive_conv: kernel larger than padded input");

  const auto x = input.data();
  const auto f = kernel.data();
  std::vector<double> y(static_cast<size_t>(n * cout * oh * ow), 0.0);
  for (int64_t b = 0; b < n; ++b)
    for (int64_t o = 0; o < cout; ++o)
      for (int64_t r = 0; r < oh; ++r)
        for (int64_t c = 0; c < ow; ++c) {
          double acc = 0.0;
          for (int64_t ci = 0; ci < cin; ++ci)
            for (int64_t kr = 0; kr < k; ++kr)
              for (int64_t kc = 0; kc < k; ++kc) {
                const int64_t ir = r * stride - pad + kr;
                const int64_t ic = c * stride - pad + kc;
                if (ir < 0 || ir >= h || ic < 0 || ic >= w) continue;
                acc += x[static_cast<size_t>(((b * cin + ci) * h + ir) * w + ic)] *
                       f[static_cast<size_t>(((o * cin + ci) * k + kr) * k + kc)];
              }
          y[static_cast<size_t>(((b * cout + o) * oh + r) * ow + c)] = acc;
        }
  return Tensor::from_vector({n, cout, oh, ow}, y);
}

}  // namespace distsearch
