#include "distsearch/pathway.hpp"

#include <cmath>

#include "distsearch/counters.hpp"
#include "distsearch/errors.hpp"

namespace distsearch {

std::string transform_kind_name(TransformKind k) {
  switch (k) {
    case TransformKind::IdentityResize: return "identity-resize";
    case TransformKind::PlainConv: return "plain-conv";
    case TransformKind::ConvAttention: return "conv-attention";
  }
  throw ContractError("transform kind: unknown enum value");
}

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "identity-resize") return TransformKind::IdentityResize;
  if (name == "plain-conv") return TransformKind::PlainConv;
  if (name == "conv-attention") return TransformKind::ConvAttention;
  throw ConfigError("unknown transform kind '" + name +
                    "' (expected identity-resize, plain-conv, or conv-attention)");
}

std::vector<TransformKind> parse_transform_kinds(const std::string& csv) {
  if (csv.empty())
    return {TransformKind::IdentityResize, TransformKind::PlainConv,
            TransformKind::ConvAttention};
  std::vector<TransformKind> kinds;
  std::string cur;
  for (char c : csv + ",") {
    if (c == ',') {
      if (!cur.empty()) kinds.push_back(parse_transform_kind(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (kinds.empty()) throw ConfigError("transform kind list is empty");
  for (size_t a = 0; a < kinds.size(); ++a)
    for (size_t b = a + 1; b < kinds.size(); ++b)
      if (kinds[a] == kinds[b])
        throw ConfigError("duplicate transform kind '" + transform_kind_name(kinds[a]) + "'");
  return kinds;
}

std::string distance_kind_name(DistanceKind k) {
  return k == DistanceKind::L2 ? "l2" : "l1";
}

DistanceKind parse_distance_kind(const std::string& name) {
  if (name == "l2") return DistanceKind::L2;
  if (name == "l1") return DistanceKind::L1;
  throw ConfigError("unknown distance kind '" + name + "' (expected l2 or l1)");
}

namespace {

Tensor conv_weight(Rng& rng, int64_t out, int64_t in, int64_t k) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k));
  std::vector<double> v(static_cast<size_t>(out * in * k * k));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_vector({out, in, k, k}, std::move(v), true);
}

Tensor zero_bias(int64_t channels) { return Tensor::zeros({channels, 1, 1}, true); }

void check_chw(const char* what, const Shape& s) {
  if (s.size() != 3) throw ContractError(std::string(what) + ": shape must be (C,H,W)");
  for (int64_t d : s)
    if (d < 1) throw ContractError(std::string(what) + ": nonpositive extent");
}

}  // namespace

TransformBlock make_transform_block(TransformKind kind, const Shape& source,
                                    const Shape& target, Rng& rng) {
  check_chw("transform block source", source);
  check_chw("transform block target", target);
  TransformBlock b;
  b.kind = kind;
  b.source_shape = source;
  b.target_shape = target;
  switch (kind) {
    case TransformKind::IdentityResize:
      if (source[0] != target[0]) {
        b.params.emplace_back("align.weight", conv_weight(rng, target[0], source[0], 1));
        b.params.emplace_back("align.bias", zero_bias(target[0]));
      }
      break;
    case TransformKind::PlainConv:
      b.params.emplace_back("main.weight", conv_weight(rng, target[0], source[0], 3));
      b.params.emplace_back("main.bias", zero_bias(target[0]));
      break;
    case TransformKind::ConvAttention:
      b.params.emplace_back("main.weight", conv_weight(rng, target[0], source[0], 3));
      b.params.emplace_back("main.bias", zero_bias(target[0]));
      b.params.emplace_back("att.weight", conv_weight(rng, 1, source[0], 3));
      b.params.emplace_back("att.bias", zero_bias(1));
      break;
  }
  return b;
}

Tensor apply_transform(const TransformBlock& block, const Tensor& feat) {
  if (!feat.defined() || feat.shape().size() != 4)
    throw ShapeError("apply_transform: feature map must be 4-D");
  if (feat.dim(1) != block.source_shape[0])
    throw ShapeError("apply_transform: feature has " + std::to_string(feat.dim(1)) +
                     " channels, block expects " + std::to_string(block.source_shape[0]));
  Tensor x = feat;
  switch (block.kind) {
    case TransformKind::IdentityResize:
      if (!block.params.empty())
        x = add(conv2d(x, block.params[0].second, 1, 0), block.params[1].second);
      break;
    case TransformKind::PlainConv:
      x = add(conv2d(x, block.params[0].second, 1, 1), block.params[1].second);
      break;
    case TransformKind::ConvAttention: {
      Tensor main = add(conv2d(x, block.params[0].second, 1, 1), block.params[1].second);
      Tensor gate = sigmoid(add(conv2d(x, block.params[2].second, 1, 1), block.params[3].second));
      x = mul(main, gate);  // gate is (N,1,h,w), broadcast over channels
      break;
    }
  }
  x = bilinear_resize(x, block.target_shape[1], block.target_shape[2]);
  if (x.dim(1) != block.target_shape[0])
    throw ShapeError("apply_transform: produced " + std::to_string(x.dim(1)) +
                     " channels, target wants " + std::to_string(block.target_shape[0]));
  return x;
}

std::string pathway_id(int i, int j, int k) {
  return "t" + std::to_string(i) + "-s" + std::to_string(j) + "-k" + std::to_string(k);
}

std::vector<std::string> PathwaySet::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.id);
  return out;
}

std::vector<std::pair<std::string, Tensor>> PathwaySet::named_params() {
  std::vector<std::pair<std::string, Tensor>> out;
  for (auto& e : entries)
    for (auto& [name, t] : e.block.params) out.emplace_back(e.id + "." + name, t);
  return out;
}

void PathwaySet::set_requires_grad(bool value) {
  for (auto& e : entries)
    for (auto& [name, t] : e.block.params) {
      Tensor fresh = Tensor::from_vector(
          t.shape(), std::vector<double>(t.data().begin(), t.data().end()), value);
      t = fresh;
    }
}

PathwaySet PathwaySet::clone() const {
  PathwaySet c;
  c.transforms_per_pair = transforms_per_pair;
  c.entries.reserve(entries.size());
  for (const auto& e : entries) {
    PathwayEntry n = e;
    n.block.params.clear();
    for (const auto& [name, t] : e.block.params) n.block.params.emplace_back(name, t.clone());
    c.entries.push_back(std::move(n));
  }
  return c;
}

PathwaySet enumerate_pathways(const NetworkSpec& student, const NetworkSpec& teacher,
                              const std::vector<TransformKind>& kinds,
                              const Tensor& probe_input, uint64_t seed) {
  if (kinds.empty()) throw ContractError("enumerate_pathways: no transform kinds");
  const auto t_taps = teacher.tap_shapes();
  const auto s_taps = student.tap_shapes();
  if (t_taps.empty() || s_taps.empty())
    throw SpecError("enumerate_pathways: both networks need at least one tap");
  if (!probe_input.defined() || probe_input.shape().size() != 4)
    throw SpecError("enumerate_pathways: probe input must be (N,C,H,W)");
  for (const NetworkSpec* spec : {&student, &teacher})
    if (probe_input.dim(1) != spec->input_shape[0] ||
        probe_input.dim(2) != spec->input_shape[1] ||
        probe_input.dim(3) != spec->input_shape[2])
      throw SpecError("enumerate_pathways: probe " + shape_str(probe_input.shape()) +
                      " does not match network input " + shape_str(spec->input_shape));

  PathwaySet set;
  set.transforms_per_pair = static_cast<int>(kinds.size());
  Rng rng(seed);
  for (size_t i = 0; i < t_taps.size(); ++i)
    for (size_t j = 0; j < s_taps.size(); ++j)
      for (size_t k = 0; k < kinds.size(); ++k) {
        PathwayEntry e;
        e.i = static_cast<int>(i);
        e.j = static_cast<int>(j);
        e.k = static_cast<int>(k);
        e.kind = kinds[k];
        e.id = pathway_id(e.i, e.j, e.k);
        e.block = make_transform_block(kinds[k], s_taps[j], t_taps[i], rng);
        set.entries.push_back(std::move(e));
      }
  return set;
}

Tensor pathway_loss(const PathwayEntry& entry, const std::vector<Tensor>& student_taps,
                    const std::vector<Tensor>& teacher_taps, DistanceKind delta) {
  if (entry.j < 0 || static_cast<size_t>(entry.j) >= student_taps.size())
    throw ContractError("pathway_loss: student tap index " + std::to_string(entry.j) +
                        " out of range");
  if (entry.i < 0 || static_cast<size_t>(entry.i) >= teacher_taps.size())
    throw ContractError("pathway_loss: teacher tap index " + std::to_string(entry.i) +
                        " out of range");
  counters().pathway_evals += 1;
  Tensor transformed = apply_transform(entry.block, student_taps[static_cast<size_t>(entry.j)]);
  Tensor target = teacher_taps[static_cast<size_t>(entry.i)].detached();
  return delta == DistanceKind::L2 ? mse_loss(transformed, target)
                                   : l1_loss(transformed, target);
}

}  // namespace distsearch
