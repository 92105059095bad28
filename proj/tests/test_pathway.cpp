#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstring>
#include <map>
#include <set>

#include "distsearch/counters.hpp"
#include "distsearch/errors.hpp"
#include "distsearch/pathway.hpp"

using namespace distsearch;

namespace {

NetworkSpec one_tap_spec(int channels, int num_classes) {
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

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(),
                     sizeof(double) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace

TEST_CASE("reference taps and three kinds enumerate 27 pathways") {
  NetworkSpec teacher = reference_teacher_spec(4);
  NetworkSpec student = reference_student_spec(4);
  Tensor probe = Tensor::zeros({1, 1, 16, 16});
  PathwaySet set = enumerate_pathways(student, teacher, parse_transform_kinds(""), probe, 5);
  CHECK(set.size() == 27);
  CHECK(set.transforms_per_pair == 3);

  std::set<std::string> ids;
  const auto t_shapes = teacher.tap_shapes();
  for (const auto& e : set.entries) {
    ids.insert(e.id);
    CHECK(e.id == pathway_id(e.i, e.j, e.k));
    CHECK(e.block.target_shape == t_shapes[static_cast<size_t>(e.i)]);
  }
  CHECK(ids.size() == 27);  // unique triples
  CHECK(set.entries.front().id == "t0-s0-k0");
  CHECK(set.entries.back().id == "t2-s2-k2");
}

TEST_CASE("single tap pair with one kind enumerates one pathway") {
  NetworkSpec teacher = one_tap_spec(8, 2);
  NetworkSpec student = one_tap_spec(4, 2);
  Tensor probe = Tensor::zeros({1, 1, 8, 8});
  PathwaySet set =
      enumerate_pathways(student, teacher, {TransformKind::PlainConv}, probe, 1);
  CHECK(set.size() == 1);
  CHECK(set.entries[0].id == "t0-s0-k0");
}

TEST_CASE("enumeration is deterministic per seed") {
  NetworkSpec teacher = small_teacher_spec(3);
  NetworkSpec student = small_student_spec(3);
  Tensor probe = Tensor::zeros({1, 1, 16, 16});
  auto kinds = parse_transform_kinds("");
  PathwaySet a = enumerate_pathways(student, teacher, kinds, probe, 9);
  PathwaySet b = enumerate_pathways(student, teacher, kinds, probe, 9);
  PathwaySet c = enumerate_pathways(student, teacher, kinds, probe, 10);
  REQUIRE(a.size() == b.size());
  bool all_equal = true, any_diff_c = false;
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t p = 0; p < a.entries[i].block.params.size(); ++p) {
      if (!bits_equal(a.entries[i].block.params[p].second, b.entries[i].block.params[p].second))
        all_equal = false;
      if (!bits_equal(a.entries[i].block.params[p].second, c.entries[i].block.params[p].second))
        any_diff_c = true;
    }
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("identity-resize on an aligned map is the identity") {
  Rng rng(3);
  TransformBlock b = make_transform_block(TransformKind::IdentityResize, {4, 6, 6}, {4, 6, 6}, rng);
  CHECK(b.params.empty());
  std::vector<double> v(2 * 4 * 6 * 6);
  for (auto& x : v) x = rng.uniform(-2.0, 2.0);
  Tensor feat = Tensor::from_vector({2, 4, 6, 6}, v);
  CHECK(bits_equal(apply_transform(b, feat), feat));
}

TEST_CASE("identity-resize aligns channels with a 1x1 conv when needed") {
  Rng rng(4);
  TransformBlock b = make_transform_block(TransformKind::IdentityResize, {2, 4, 4}, {5, 8, 8}, rng);
  REQUIRE(b.params.size() == 2);
  CHECK(b.params[0].second.shape() == Shape{5, 2, 1, 1});
  Tensor feat = Tensor::full({3, 2, 4, 4}, 0.5);
  Tensor out = apply_transform(b, feat);
  CHECK(out.shape() == Shape{3, 5, 8, 8});
}

TEST_CASE("zeroed attention branch gates the conv branch by exactly one half") {
  Rng rng(8);
  TransformBlock b =
      make_transform_block(TransformKind::ConvAttention, {3, 5, 5}, {4, 7, 7}, rng);
  REQUIRE(b.params.size() == 4);
  // zero the attention conv so its logits are 0 -> sigmoid is exactly 0.5
  {
    auto w = b.params[2].second.raw_data();
    std::fill(w.begin(), w.end(), 0.0);
    auto bias = b.params[3].second.raw_data();
    std::fill(bias.begin(), bias.end(), 0.0);
  }
  std::vector<double> v(2 * 3 * 5 * 5);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  Tensor feat = Tensor::from_vector({2, 3, 5, 5}, v);
  Tensor out = apply_transform(b, feat);

  Tensor main = add(conv2d(feat, b.params[0].second, 1, 1), b.params[1].second);
  Tensor expected = bilinear_resize(mul(main, Tensor::scalar(0.5)), 7, 7);
  CHECK(bits_equal(out, expected));
}

TEST_CASE("transform gradients pass grad_check for every kind") {
  Rng rng(15);
  for (TransformKind kind :
       {TransformKind::IdentityResize, TransformKind::PlainConv, TransformKind::ConvAttention}) {
    TransformBlock b = make_transform_block(kind, {2, 4, 4}, {3, 3, 3}, rng);
    std::vector<double> fv(1 * 2 * 4 * 4), wv(1 * 3 * 3 * 3);
    for (auto& x : fv) x = rng.uniform(-1.0, 1.0);
    for (auto& x : wv) x = rng.uniform(-1.0, 1.0);
    Tensor feat = Tensor::from_vector({1, 2, 4, 4}, fv, true);
    Tensor mask = Tensor::from_vector({1, 3, 3, 3}, wv);

    std::vector<std::pair<std::string, Tensor>> params = b.params;
    params.emplace_back("feat", feat);
    auto f = [&] { return sum(mul(apply_transform(b, feat), mask)); };
    auto rep = grad_check(f, params, 1e-5, 1e-5);
    CAPTURE(transform_kind_name(kind));
    CHECK(rep.pass);
  }
}

TEST_CASE("pathway loss values on constant maps") {
  Rng rng(2);
  PathwayEntry e;
  e.i = 0;
  e.j = 0;
  e.k = 0;
  e.kind = TransformKind::IdentityResize;
  e.id = pathway_id(0, 0, 0);
  e.block = make_transform_block(TransformKind::IdentityResize, {2, 3, 3}, {2, 3, 3}, rng);

  std::vector<Tensor> s_taps = {Tensor::full({1, 2, 3, 3}, 1.0)};
  std::vector<Tensor> t_taps = {Tensor::full({1, 2, 3, 3}, 3.0)};
  CHECK(pathway_loss(e, s_taps, t_taps, DistanceKind::L2).item() == doctest::Approx(4.0));
  CHECK(pathway_loss(e, s_taps, t_taps, DistanceKind::L1).item() == doctest::Approx(2.0));
  // identical maps -> zero
  CHECK(pathway_loss(e, t_taps, t_taps, DistanceKind::L2).item() == 0.0);
  CHECK(pathway_loss(e, t_taps, t_taps, DistanceKind::L1).item() == 0.0);
}

TEST_CASE("no gradient reaches teacher parameters through pathway losses") {
  Network teacher(small_teacher_spec(3), 1, "teacher");
  teacher.freeze();
  Network student(small_student_spec(3), 2);
  Dataset d = synth_task(4, 3, 0.1, 6);
  auto tf = teacher.forward_with_taps(d.images);
  auto sf = student.forward_with_taps(d.images);

  Tensor probe = Tensor::zeros({1, 1, 16, 16});
  PathwaySet set = enumerate_pathways(student.spec(), teacher.spec(),
                                      parse_transform_kinds(""), probe, 3);
  set.set_requires_grad(true);
  Tensor total = Tensor::scalar(0.0, false);
  for (const auto& e : set.entries)
    total = add(total, pathway_loss(e, sf.taps, tf.taps, DistanceKind::L2));
  backward(total);

  for (const auto& [name, t] : teacher.params()) CHECK_FALSE(t.has_grad());
  bool student_touched = false;
  for (const auto& [name, t] : student.params()) student_touched = student_touched || t.has_grad();
  CHECK(student_touched);
  bool blocks_touched = false;
  for (auto& [name, t] : set.named_params()) blocks_touched = blocks_touched || t.has_grad();
  CHECK(blocks_touched);
}

TEST_CASE("pathway losses are permutation-stable") {
  Network teacher(small_teacher_spec(2), 4, "teacher");
  teacher.freeze();
  Network student(small_student_spec(2), 5);
  Dataset d = synth_task(3, 2, 0.2, 8);
  auto tf = teacher.forward_with_taps(d.images);
  auto sf = student.forward_with_taps(d.images);

  Tensor probe = Tensor::zeros({1, 1, 16, 16});
  PathwaySet set = enumerate_pathways(student.spec(), teacher.spec(),
                                      parse_transform_kinds(""), probe, 6);
  std::map<std::string, double> before;
  for (const auto& e : set.entries)
    before[e.id] = pathway_loss(e, sf.taps, tf.taps, DistanceKind::L2).item();

  std::reverse(set.entries.begin(), set.entries.end());
  Rng rng(77);
  rng.shuffle(set.entries);
  for (const auto& e : set.entries)
    CHECK(pathway_loss(e, sf.taps, tf.taps, DistanceKind::L2).item() == before[e.id]);
}

TEST_CASE("apply_transform always lands on the target shape") {
  Rng rng(31);
  for (int iter = 0; iter < 30; ++iter) {
    const Shape src = {1 + static_cast<int64_t>(rng.below(4)), 2 + static_cast<int64_t>(rng.below(5)),
                       2 + static_cast<int64_t>(rng.below(5))};
    const Shape dst = {1 + static_cast<int64_t>(rng.below(4)), 2 + static_cast<int64_t>(rng.below(5)),
                       2 + static_cast<int64_t>(rng.below(5))};
    const auto kinds = parse_transform_kinds("");
    const TransformKind kind = kinds[rng.below(3)];
    TransformBlock b = make_transform_block(kind, src, dst, rng);
    std::vector<double> v(static_cast<size_t>(2 * shape_numel(src)));
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    Tensor feat = Tensor::from_vector({2, src[0], src[1], src[2]}, v);
    Tensor out = apply_transform(b, feat);
    CHECK(out.shape() == Shape{2, dst[0], dst[1], dst[2]});
  }
}

TEST_CASE("pathway evaluation counter ticks once per loss") {
  Rng rng(1);
  PathwayEntry e;
  e.block = make_transform_block(TransformKind::IdentityResize, {1, 2, 2}, {1, 2, 2}, rng);
  e.id = pathway_id(0, 0, 0);
  std::vector<Tensor> taps = {Tensor::full({1, 1, 2, 2}, 1.0)};
  counters().reset();
  pathway_loss(e, taps, taps, DistanceKind::L2);
  pathway_loss(e, taps, taps, DistanceKind::L1);
  CHECK(counters().pathway_evals == 2);
}

TEST_CASE("kind and distance parsing") {
  CHECK(parse_transform_kind("plain-conv") == TransformKind::PlainConv);
  CHECK(transform_kind_name(TransformKind::ConvAttention) == "conv-attention");
  CHECK_THROWS_AS(parse_transform_kind("resnet"), ConfigError);
  CHECK_THROWS_AS(parse_transform_kinds("plain-conv,plain-conv"), ConfigError);
  CHECK(parse_transform_kinds("plain-conv,identity-resize").size() == 2);
  CHECK(parse_distance_kind("l1") == DistanceKind::L1);
  CHECK_THROWS_AS(parse_distance_kind("cosine"), ConfigError);
  CHECK_THROWS_AS(pathway_loss(PathwayEntry{}, {}, {}, DistanceKind::L2), ContractError);
}
