#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "distsearch/errors.hpp"
#include "distsearch/oracle.hpp"
#include "distsearch/rng.hpp"
#include "kd_reference.hpp"

using namespace distsearch;

TEST_CASE("quadratic toy: direct perturbation reproduces the closed form") {
  QuadraticBilevelProblem pb(1.0);
  AlphaState alpha({0.0}, NormStrategy::BiasedSoftmax, 1.0);
  auto g = brute_force_hypergradient(pb, alpha, 0.1, 1e-4);
  REQUIRE(g.size() == 1);
  CHECK(g[0] == doctest::Approx(0.09).epsilon(1e-8));
  CHECK(pb.theta()[0] == 1.0);

  // frozen inner step: theta1 is independent of alpha
  auto z = brute_force_hypergradient(pb, alpha, 0.0, 1e-4);
  CHECK(z[0] == 0.0);

  CHECK_THROWS_AS(brute_force_hypergradient(pb, alpha, 0.1, 0.0), ContractError);
}

TEST_CASE("distillation toy: finite-difference meta-gradient matches direct perturbation") {
  auto rig = kdref::make_reference_rig();
  REQUIRE(rig.pathways.size() == 12);
  KDBilevelProblem pb = kdref::warmed_problem(rig);

  const auto approx = hypergradient(pb, rig.alpha, rig.cfg);
  const auto oracle = brute_force_hypergradient(pb, rig.alpha, rig.cfg.xi, 1e-4);

  auto rep = compare_hypergradient(approx, oracle);
  INFO(rep.summary());
  CHECK(rep.cosine > 0.999);
  CHECK(rep.max_rel_err < 1e-3);
  CHECK(rep.pass);

  // Every component of this rig carries real signal; the comparison never
  // leans on the magnitude floor.
  for (const auto& c : rep.components) CHECK(std::abs(c.exact) > 1e-3);
}

TEST_CASE("distillation toy: direction agreement is seed-robust" *
          doctest::timeout(300)) {
  // Componentwise bounds need the calibrated reference task (the smallest
  // component of an arbitrary draw can sit below the finite-difference noise
  // floor), but the direction of the meta-gradient is stable everywhere.
  for (uint64_t seed : {101, 102, 103}) {
    auto rig = kdref::make_reference_rig(seed);
    KDBilevelProblem pb = kdref::warmed_problem(rig, 8);
    // Small measurement batches keep the 24 oracle inner steps cheap.
    pb.set_batches(BatchStream(rig.parts.train(), 64, 17).next(),
                   BatchStream(rig.parts.val(), 32, 19).next());
    const auto approx = hypergradient(pb, rig.alpha, rig.cfg);
    const auto oracle = brute_force_hypergradient(pb, rig.alpha, rig.cfg.xi, 1e-4);
    auto rep = compare_hypergradient(approx, oracle);
    INFO("seed ", seed, "\n", rep.summary());
    CHECK(rep.cosine > 0.999);
  }
}

TEST_CASE("comparison report: floor, tolerances, verdict") {
  auto rep = compare_hypergradient({1.0, 2.0}, {1.0, 2.0});
  CHECK(rep.cosine == doctest::Approx(1.0));
  CHECK(rep.max_rel_err == 0.0);
  CHECK(rep.pass);
  CHECK(rep.summary().find("verdict=pass") != std::string::npos);

  // a component below the floor is reported but not held to the bound
  auto tiny = compare_hypergradient({1.0, 1e-11}, {1.0, 1e-12});
  CHECK(tiny.pass);
  CHECK(tiny.components[1].rel_err == doctest::Approx(std::abs(1e-11 - 1e-12) / 1e-8));

  // a real divergence fails
  auto bad = compare_hypergradient({1.0, 2.0}, {1.0, 2.5});
  CHECK_FALSE(bad.pass);
  CHECK(bad.summary().find("verdict=fail") != std::string::npos);

  // opposite direction fails on the cosine even when magnitudes are tiny
  auto flipped = compare_hypergradient({1.0, -1.0}, {-1.0, 1.0});
  CHECK(flipped.cosine == doctest::Approx(-1.0));
  CHECK_FALSE(flipped.pass);

  CHECK_THROWS_AS(compare_hypergradient({1.0}, {1.0, 2.0}), ContractError);
  CHECK_THROWS_AS(compare_hypergradient({}, {}), ContractError);
}

TEST_CASE("probe sweep covers the grid and stays accurate on the quadratic") {
  QuadraticBilevelProblem pb(1.0);
  AlphaState alpha({0.0}, NormStrategy::BiasedSoftmax, 1.0);
  SearchConfig base;
  base.epsilon_mode = EpsilonMode::Fixed;
  auto points = hypergrad_sweep(pb, alpha, base, {1e-3, 1e-5}, {1e-1, 1e-2, 1e-4});
  REQUIRE(points.size() == 6);
  for (auto& p : points) {
    CHECK(p.cosine == doctest::Approx(1.0));
    CHECK(p.max_rel_err < 1e-6);
  }
}

TEST_CASE("naive convolution agrees with the differentiable one on random shapes") {
  Rng rng(91);
  for (int iter = 0; iter < 50; ++iter) {
    const int64_t n = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t cin = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t cout = 1 + static_cast<int64_t>(rng.below(4));
    const int64_t k = 1 + static_cast<int64_t>(rng.below(3));
    const int64_t pad = static_cast<int64_t>(rng.below(2));
    const int64_t stride = 1 + static_cast<int64_t>(rng.below(2));
    const int64_t h = k + static_cast<int64_t>(rng.below(5));
    const int64_t w = k + static_cast<int64_t>(rng.below(5));

    std::vector<double> xv(static_cast<size_t>(n * cin * h * w));
    std::vector<double> fv(static_cast<size_t>(cout * cin * k * k));
    for (auto& v : xv) v = rng.uniform(-1.0, 1.0);
    for (auto& v : fv) v = rng.uniform(-1.0, 1.0);
    Tensor x = Tensor::from_vector({n, cin, h, w}, xv);
    Tensor f = Tensor::from_vector({cout, cin, k, k}, fv);

    Tensor a = conv2d(x, f, stride, pad);
    Tensor b = naive_conv(x, f, stride, pad);
    REQUIRE(a.shape() == b.shape());
    auto ad = a.data(), bd = b.data();
    for (size_t i = 0; i < ad.size(); ++i) CHECK(std::abs(ad[i] - bd[i]) <= 1e-12);
  }
}

TEST_CASE("naive convolution closed forms") {
  // identity 1x1 kernel passes the input through
  Rng rng(17);
  std::vector<double> xv(2 * 1 * 3 * 3);
  for (auto& v : xv) v = rng.uniform(-2.0, 2.0);
  Tensor x = Tensor::from_vector({2, 1, 3, 3}, xv);
  Tensor id = Tensor::from_vector({1, 1, 1, 1}, {1.0});
  auto y = naive_conv(x, id, 1, 0);
  CHECK(y.data()[4] == x.data()[4]);
  for (size_t i = 0; i < xv.size(); ++i) CHECK(y.data()[i] == xv[i]);

  // all-ones 3x3 on a 3x3 ones input with pad 1: center sums 9, corners 4
  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor kern = Tensor::full({1, 1, 3, 3}, 1.0);
  auto s = naive_conv(ones, kern, 1, 1);
  CHECK(s.data()[4] == 9.0);
  CHECK(s.data()[0] == 4.0);
  CHECK(s.data()[2] == 4.0);
  CHECK(s.data()[1] == 6.0);

  CHECK_THROWS_AS(naive_conv(x, Tensor::full({1, 2, 1, 1}, 1.0), 1, 0), ShapeError);
}
