#pragma once

// Randomized finite-difference sweep over every differentiable op kind.
// Shared by the unit tests and the acceptance runner so both gate on the
// same evidence. Inputs near kinks (relu, l1) are sampled away from zero so
// central differences stay valid.

#include <cstdint>
#include <string>
#include <vector>

#include "distsearch/rng.hpp"
#include "distsearch/tensor.hpp"

namespace fdsuite {

struct Result {
  int cases = 0;
  int failures = 0;
  double max_rel = 0.0;
  std::vector<std::string> failure_names;
};

namespace detail {

using distsearch::Rng;
using distsearch::Shape;
using distsearch::Tensor;

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(distsearch::shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_vector(std::move(shape), std::move(v), true);
}

// Values with |x| >= margin, both signs: safe for relu/|.| kinks under FD.
inline Tensor random_away_from_zero(Rng& rng, Shape shape, double margin) {
  std::vector<double> v(static_cast<size_t>(distsearch::shape_numel(shape)));
  for (auto& x : v) {
    const double mag = rng.uniform(margin, 1.0);
    x = rng.uniform() < 0.5 ? -mag : mag;
  }
  return Tensor::from_vector(std::move(shape), std::move(v), true);
}

inline void record(Result& r, const std::string& name,
                   const distsearch::GradCheckReport& rep) {
  r.cases += 1;
  r.max_rel = std::max(r.max_rel, rep.max_rel_err);
  if (!rep.pass) {
    r.failures += 1;
    r.failure_names.push_back(name + ": " + rep.summary());
  }
}

}  // namespace detail

// Runs `repeats` randomized cases per op kind; 17 kinds total.
inline Result run(uint64_t seed, int repeats = 6, double h = 1e-5, double tol = 1e-5) {
  using namespace distsearch;
  using detail::random_away_from_zero;
  using detail::random_tensor;
  using detail::record;

  Rng rng(seed);
  Result res;

  for (int rep = 0; rep < repeats; ++rep) {
    const std::string tag = "#" + std::to_string(rep);

    {  // matmul
      const int64_t m = 1 + static_cast<int64_t>(rng.below(3));
      const int64_t k = 1 + static_cast<int64_t>(rng.below(3));
      const int64_t n = 1 + static_cast<int64_t>(rng.below(3));
      Tensor a = random_tensor(rng, {m, k});
      Tensor b = random_tensor(rng, {k, n});
      auto f = [&] { return sum(matmul(a, b)); };
      record(res, "matmul" + tag, grad_check(f, {{"a", a}, {"b", b}}, h, tol));
    }
    {  // conv2d
      const int64_t ci = 1 + static_cast<int64_t>(rng.below(2));
      const int64_t co = 1 + static_cast<int64_t>(rng.below(2));
      const int64_t hw = 3 + static_cast<int64_t>(rng.below(3));
      const int64_t kk = 1 + 2 * static_cast<int64_t>(rng.below(2));  // 1 or 3
      const int64_t stride = 1 + static_cast<int64_t>(rng.below(2));
      const int64_t pad = static_cast<int64_t>(rng.below(2));
      Tensor x = random_tensor(rng, {1, ci, hw, hw});
      Tensor kern = random_tensor(rng, {co, ci, kk, kk});
      auto f = [&] { return sum(conv2d(x, kern, stride, pad)); };
      record(res, "conv2d" + tag, grad_check(f, {{"x", x}, {"kernel", kern}}, h, tol));
    }
    {  // relu
      Tensor x = random_away_from_zero(rng, {2, 3}, 0.1);
      Tensor w = random_tensor(rng, {2, 3});
      auto f = [&] { return sum(mul(relu(x), w.detached())); };
      record(res, "relu" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // sigmoid
      Tensor x = random_tensor(rng, {3, 2}, -3.0, 3.0);
      Tensor w = random_tensor(rng, {3, 2});
      auto f = [&] { return sum(mul(sigmoid(x), w.detached())); };
      record(res, "sigmoid" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // add with broadcasting
      Tensor a = random_tensor(rng, {2, 1, 3});
      Tensor b = random_tensor(rng, {4, 3});
      Tensor w = random_tensor(rng, {2, 4, 3});
      auto f = [&] { return sum(mul(add(a, b), w.detached())); };
      record(res, "add" + tag, grad_check(f, {{"a", a}, {"b", b}}, h, tol));
    }
    {  // mul with broadcasting
      Tensor a = random_tensor(rng, {3, 1});
      Tensor b = random_tensor(rng, {3, 4});
      auto f = [&] { return sum(mul(a, b)); };
      record(res, "mul" + tag, grad_check(f, {{"a", a}, {"b", b}}, h, tol));
    }
    {  // softmax along a random axis
      Tensor x = random_tensor(rng, {2, 3, 2}, -2.0, 2.0);
      const int64_t axis = static_cast<int64_t>(rng.below(3));
      Tensor w = random_tensor(rng, {2, 3, 2});
      auto f = [&] { return sum(mul(softmax(x, axis), w.detached())); };
      record(res, "softmax" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // biased softmax
      Tensor x = random_tensor(rng, {5}, -2.0, 2.0);
      const double g = rng.uniform(-1.0, 2.0);
      Tensor w = random_tensor(rng, {5});
      auto f = [&] { return weighted_sum(w.detached(), biased_softmax(x, g)); };
      record(res, "biased_softmax" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // l1 normalize (entries away from zero; FD keeps the sign pattern)
      Tensor x = random_away_from_zero(rng, {4}, 0.1);
      const bool add_one = rng.uniform() < 0.5;
      Tensor w = random_tensor(rng, {4});
      auto f = [&] { return weighted_sum(w.detached(), l1_normalize(x, add_one)); };
      record(res, "l1_normalize" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // bilinear resize (up and down)
      const int64_t ih = 2 + static_cast<int64_t>(rng.below(3));
      const int64_t oh = 2 + static_cast<int64_t>(rng.below(4));
      Tensor x = random_tensor(rng, {1, 2, ih, ih});
      Tensor w = random_tensor(rng, {1, 2, oh, oh});
      auto f = [&] { return sum(mul(bilinear_resize(x, oh, oh), w.detached())); };
      record(res, "bilinear_resize" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // strided average pool
      const int64_t k = 1 + static_cast<int64_t>(rng.below(2));
      const int64_t s = 1 + static_cast<int64_t>(rng.below(2));
      Tensor x = random_tensor(rng, {1, 2, 4, 4});
      auto f = [&] { return sum(avg_pool(x, k, s)); };
      record(res, "avg_pool" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // global average pool
      Tensor x = random_tensor(rng, {2, 3, 3, 2});
      Tensor w = random_tensor(rng, {2, 3, 1, 1});
      auto f = [&] { return sum(mul(global_avg_pool(x), w.detached())); };
      record(res, "global_avg_pool" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // cross entropy with softmax
      const int64_t n = 2 + static_cast<int64_t>(rng.below(3));
      const int64_t c = 2 + static_cast<int64_t>(rng.below(3));
      Tensor x = random_tensor(rng, {n, c}, -2.0, 2.0);
      std::vector<int> labels(static_cast<size_t>(n));
      for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<uint64_t>(c)));
      auto f = [&] { return cross_entropy(x, labels); };
      record(res, "cross_entropy" + tag, grad_check(f, {{"logits", x}}, h, tol));
    }
    {  // mean squared distance
      Tensor a = random_tensor(rng, {2, 3});
      Tensor b = random_tensor(rng, {2, 3});
      auto f = [&] { return mse_loss(a, b); };
      record(res, "mse_loss" + tag, grad_check(f, {{"a", a}, {"b", b}}, h, tol));
    }
    {  // mean absolute distance: keep |a-b| off the kink
      Tensor a = random_tensor(rng, {2, 3}, 1.0, 2.0);
      Tensor b = random_tensor(rng, {2, 3}, -2.0, -1.0);
      auto f = [&] { return l1_loss(a, b); };
      record(res, "l1_loss" + tag, grad_check(f, {{"a", a}, {"b", b}}, h, tol));
    }
    {  // reshape + sum
      Tensor x = random_tensor(rng, {2, 6});
      Tensor w = random_tensor(rng, {3, 4});
      auto f = [&] { return sum(mul(reshape(x, {3, 4}), w.detached())); };
      record(res, "reshape" + tag, grad_check(f, {{"x", x}}, h, tol));
    }
    {  // stack_scalars + gather + weighted_sum pipeline
      Tensor a = random_tensor(rng, {});
      Tensor b = random_tensor(rng, {});
      Tensor c = random_tensor(rng, {});
      Tensor raw = random_tensor(rng, {5}, -1.0, 1.0);
      auto f = [&] {
        Tensor vals = stack_scalars({mul(a, a), add(b, c), mul(b, c)});
        Tensor w = gather(biased_softmax(raw, 1.0), {0, 2, 4});
        return weighted_sum(w, vals);
      };
      record(res, "stack_gather_weighted" + tag,
             grad_check(f, {{"a", a}, {"b", b}, {"c", c}, {"raw", raw}}, h, tol));
    }
  }
  return res;
}

}  // namespace fdsuite
