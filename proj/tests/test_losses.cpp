#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>

#include "distsearch/counters.hpp"
#include "distsearch/errors.hpp"
#include "distsearch/losses.hpp"
#include "distsearch/rng.hpp"

using namespace distsearch;

namespace {

NetworkSpec tiny_spec(int channels, int num_classes) {
  NetworkSpec s;
  s.input_shape = {1, 8, 8};
  s.layers = {{LayerKind::Conv, channels, 3, 1, 1},
              {LayerKind::Relu},
              {LayerKind::Pool, 0, 2, 2},
              {LayerKind::Linear, num_classes}};
  s.tap_indices = {2};
  s.num_classes = num_classes;
  s.validate();
  return s;
}

struct Rig {
  Network teacher;
  Network student;
  PathwaySet pathways;
  Batch batch;
  std::vector<Tensor> teacher_taps;

  explicit Rig(const std::vector<TransformKind>& kinds, uint64_t seed = 5)
      : teacher(tiny_spec(6, 3), seed, "teacher"), student(tiny_spec(3, 3), seed + 1) {
    teacher.freeze();
    Dataset d = synth_task(6, 3, 0.1, seed + 2, 8, 8);
    batch = Batch{d.images, d.labels};
    pathways = enumerate_pathways(student.spec(), teacher.spec(), kinds,
                                  Tensor::zeros({1, 1, 8, 8}), seed + 3);
    pathways.set_requires_grad(true);
    teacher_taps = teacher.forward_with_taps(batch.images).taps;
  }
};

const std::vector<NormStrategy> kAllStrategies = {
    NormStrategy::BiasedSoftmax, NormStrategy::PlainSoftmax, NormStrategy::L1Plus1,
    NormStrategy::L1, NormStrategy::Sigmoid};

}  // namespace

TEST_CASE("normalization closed forms") {
  auto b = normalize_alpha({0.0, 0.0}, NormStrategy::BiasedSoftmax, 1.0);
  const double expected = 1.0 / (2.0 + std::exp(1.0));
  CHECK(b[0] == doctest::Approx(expected).epsilon(1e-15));
  CHECK(b[1] == doctest::Approx(expected).epsilon(1e-15));

  auto p = normalize_alpha({std::log(2.0), std::log(2.0)}, NormStrategy::PlainSoftmax, 1.0);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

  auto s = normalize_alpha({0.0}, NormStrategy::Sigmoid, 1.0);
  CHECK(s[0] == 0.5);

  auto l = normalize_alpha({1.0, -3.0}, NormStrategy::L1, 0.0);
  CHECK(l[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(l[1] == doctest::Approx(-0.75).epsilon(1e-15));

  auto lp = normalize_alpha({1.0, 3.0}, NormStrategy::L1Plus1, 0.0);
  CHECK(lp[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(lp[1] == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("biased softmax state: entries in (0,1), mass plus bias share is one") {
  Rng rng(3);
  for (int iter = 0; iter < 40; ++iter) {
    const size_t n = 1 + rng.below(12);
    std::vector<double> raw(n);
    for (auto& v : raw) v = rng.uniform(-4.0, 4.0);
    const double g = rng.uniform(-2.0, 2.0);
    AlphaState st(raw, NormStrategy::BiasedSoftmax, g);

    double sum = 0.0, z = std::exp(g);
    for (double v : raw) z += std::exp(v);
    for (double y : st.normalized()) {
      CHECK(y > 0.0);
      CHECK(y < 1.0);
      sum += y;
    }
    CHECK(sum < 1.0);
    CHECK(std::abs(sum + std::exp(g) / z - 1.0) <= 1e-12);
  }
}

TEST_CASE("normalized weights are a pure function of raw, strategy, g") {
  AlphaState a({1.0, 2.0, 0.5}, NormStrategy::BiasedSoftmax, 1.0);
  a.set_raw({0.2, -1.0, 0.0});
  AlphaState b({0.2, -1.0, 0.0}, NormStrategy::BiasedSoftmax, 1.0);
  CHECK(a.normalized() == b.normalized());
}

TEST_CASE("biased softmax is strictly monotone in each raw entry") {
  Rng rng(9);
  for (int iter = 0; iter < 30; ++iter) {
    const size_t n = 2 + rng.below(8);
    std::vector<double> raw(n);
    for (auto& v : raw) v = rng.uniform(-3.0, 3.0);
    const auto before = normalize_alpha(raw, NormStrategy::BiasedSoftmax, 1.0);
    const size_t bump = rng.below(n);
    raw[bump] += 0.1;
    const auto after = normalize_alpha(raw, NormStrategy::BiasedSoftmax, 1.0);
    for (size_t i = 0; i < n; ++i) {
      if (i == bump)
        CHECK(after[i] > before[i]);
      else
        CHECK(after[i] < before[i]);
    }
  }
}

TEST_CASE("hand-coded normalization VJP equals the graph backward exactly") {
  Rng rng(21);
  for (NormStrategy s : kAllStrategies) {
    for (int iter = 0; iter < 10; ++iter) {
      const size_t n = 1 + rng.below(7);
      std::vector<double> raw(n), up(n);
      for (auto& v : raw) {
        v = rng.uniform(-2.0, 2.0);
        if (std::abs(v) < 1e-3) v = 0.5;  // keep l1 away from sign kinks
      }
      for (auto& v : up) v = rng.uniform(-2.0, 2.0);

      Tensor leaf = Tensor::from_vector({static_cast<int64_t>(n)}, raw, true);
      Tensor upstream = Tensor::from_vector({static_cast<int64_t>(n)}, up);
      backward(weighted_sum(upstream, normalize_alpha_op(leaf, s, 1.0)));
      const auto vjp = normalize_alpha_vjp(raw, s, 1.0, up);
      REQUIRE(vjp.size() == n);
      for (size_t i = 0; i < n; ++i) CHECK(vjp[i] == leaf.grad()[i]);
    }
  }
}

TEST_CASE("active_mask thresholds raw weights") {
  const auto m = active_mask({1.0, 0.5, 0.2}, 0.5);
  REQUIRE(m.size() == 3);
  CHECK(m[0] == true);
  CHECK(m[1] == false);  // boundary: strictly greater survives
  CHECK(m[2] == false);
}

TEST_CASE("train loss is label plus weighted pathway terms") {
  Rig rig({TransformKind::PlainConv});
  REQUIRE(rig.pathways.size() == 1);
  AlphaState alpha({1.0}, NormStrategy::BiasedSoftmax, 1.0);
  LossSpec spec;

  auto res = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, spec);
  REQUIRE(res.active_indices.size() == 1);
  const double w = alpha.normalized()[0];
  CHECK(res.total.item() ==
        doctest::Approx(res.label_value + w * res.pathway_values[0]).epsilon(1e-12));
  CHECK(res.pathway_values[0] >= 0.0);
}

TEST_CASE("train loss decomposition holds for all strategies without clipping") {
  Rig rig(parse_transform_kinds(""), 11);
  LossSpec spec;
  spec.clip = false;
  Rng rng(13);
  for (NormStrategy s : kAllStrategies) {
    std::vector<double> raw(rig.pathways.size());
    for (auto& v : raw) v = rng.uniform(0.4, 1.6);
    AlphaState alpha(raw, s, 1.0);
    auto res = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, spec);
    REQUIRE(res.active_indices.size() == rig.pathways.size());
    double dot = 0.0;
    for (size_t p = 0; p < raw.size(); ++p)
      dot += alpha.normalized()[p] * res.pathway_values[p];
    CHECK(res.total.item() == doctest::Approx(res.label_value + dot).epsilon(1e-10));
  }
}

TEST_CASE("fully clipped alpha reduces train loss to the label loss") {
  Rig rig({TransformKind::PlainConv, TransformKind::ConvAttention}, 17);
  AlphaState alpha({0.1, -2.0}, NormStrategy::BiasedSoftmax, 1.0);
  LossSpec spec;  // tau = 0.5 clips both
  counters().reset();
  auto res = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, spec);
  CHECK(res.active_indices.empty());
  CHECK(counters().pathway_skips == 2);
  CHECK(counters().pathway_evals == 0);
  CHECK(res.total.item() == val_loss(rig.student, rig.batch).item());
}

TEST_CASE("clipping with an all-active mask is bit-identical to no clipping") {
  Rig rig(parse_transform_kinds(""), 23);
  std::vector<double> raw(rig.pathways.size(), 1.0);
  AlphaState alpha(raw, NormStrategy::BiasedSoftmax, 1.0);
  LossSpec clipped;
  clipped.clip = true;
  LossSpec open;
  open.clip = false;
  auto a = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, clipped);
  auto b = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, open);
  CHECK(a.total.item() == b.total.item());
  CHECK(a.active_indices == b.active_indices);
}

TEST_CASE("gradient wrt raw alpha matches central differences") {
  Rig rig({TransformKind::PlainConv, TransformKind::IdentityResize}, 29);
  REQUIRE(rig.pathways.size() == 2);
  LossSpec spec;
  spec.clip = false;
  std::vector<double> raw = {0.8, 1.3};

  AlphaState alpha(raw, NormStrategy::BiasedSoftmax, 1.0);
  auto res = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, spec);
  backward(res.total);
  REQUIRE(res.alpha_raw.has_grad());
  const std::vector<double> analytic(res.alpha_raw.grad().begin(), res.alpha_raw.grad().end());

  const double h = 1e-5;
  for (size_t p = 0; p < raw.size(); ++p) {
    auto perturbed = raw;
    perturbed[p] = raw[p] + h;
    AlphaState ap(perturbed, NormStrategy::BiasedSoftmax, 1.0);
    const double fp =
        train_loss(rig.student, ap, rig.pathways, rig.teacher_taps, rig.batch, spec).total.item();
    perturbed[p] = raw[p] - h;
    AlphaState am(perturbed, NormStrategy::BiasedSoftmax, 1.0);
    const double fm =
        train_loss(rig.student, am, rig.pathways, rig.teacher_taps, rig.batch, spec).total.item();
    const double fd = (fp - fm) / (2.0 * h);
    CHECK(std::abs(analytic[p] - fd) / std::max({std::abs(analytic[p]), std::abs(fd), 1e-6}) <
          1e-5);
  }
}

TEST_CASE("clipped pathways contribute no gradient to their transforms") {
  Rig rig({TransformKind::PlainConv, TransformKind::ConvAttention}, 37);
  AlphaState alpha({1.2, 0.3}, NormStrategy::BiasedSoftmax, 1.0);  // second clipped at tau 0.5
  LossSpec spec;
  auto res = train_loss(rig.student, alpha, rig.pathways, rig.teacher_taps, rig.batch, spec);
  backward(res.total);
  REQUIRE(res.active_indices == std::vector<int64_t>{0});
  for (auto& [name, t] : rig.pathways.entries[0].block.params) CHECK(t.has_grad());
  for (auto& [name, t] : rig.pathways.entries[1].block.params) CHECK_FALSE(t.has_grad());
}

TEST_CASE("val loss matches closed forms and ignores alpha") {
  NetworkSpec s;
  s.input_shape = {1, 1, 2};
  s.layers = {{LayerKind::Linear, 3}};
  s.num_classes = 3;
  Network net(s, 0);
  {
    auto w = net.params()[0].second.raw_data();
    std::fill(w.begin(), w.end(), 0.0);
    auto b = net.params()[1].second.raw_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
  Batch batch{Tensor::from_vector({2, 1, 1, 2}, {0.1, 0.9, 0.4, 0.2}), {0, 2}};
  CHECK(val_loss(net, batch).item() == doctest::Approx(std::log(3.0)).epsilon(1e-14));

  // near-one-hot correct logits push the loss toward zero
  {
    auto b = net.params()[1].second.raw_data();
    b[0] = 30.0;
  }
  Batch easy{Tensor::from_vector({1, 1, 1, 2}, {0.0, 0.0}), {0}};
  CHECK(val_loss(net, easy).item() < 1e-10);
}

TEST_CASE("strategy parsing round-trips and rejects unknowns") {
  for (NormStrategy s : kAllStrategies) CHECK(parse_norm_strategy(norm_strategy_name(s)) == s);
  CHECK_THROWS_AS(parse_norm_strategy("softmax2"), ConfigError);
  CHECK_THROWS_AS(normalize_alpha({0.0, 0.0}, NormStrategy::L1, 0.0), NumericError);
}
