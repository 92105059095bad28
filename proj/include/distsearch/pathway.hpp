#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "distsearch/network.hpp"
#include "distsearch/rng.hpp"
#include "distsearch/tensor.hpp"

namespace distsearch {

// Transform block variants that align a student tap to a teacher tap:
//   identity-resize : 1x1 channel-aligning conv only when channel counts
//                     differ, then bilinear resize
//   plain-conv      : 3x3 conv to teacher channels, then resize
//   conv-attention  : 3x3 conv gated by a broadcast sigmoid over a 1-channel
//                     3x3 attention conv, then resize
enum class TransformKind { IdentityResize, PlainConv, ConvAttention };

std::string transform_kind_name(TransformKind k);
TransformKind parse_transform_kind(const std::string& name);
// Comma-separated list; empty string means all three kinds in fixed order.
std::vector<TransformKind> parse_transform_kinds(const std::string& csv);

enum class DistanceKind { L2, L1 };
std::string distance_kind_name(DistanceKind k);
DistanceKind parse_distance_kind(const std::string& name);

struct TransformBlock {
  TransformKind kind = TransformKind::IdentityResize;
  Shape source_shape;  // (C,H,W) of the student tap
  Shape target_shape;  // (C,H,W) of the teacher tap
  // Conv weights drawn uniform fan-in, biases zero. Empty for a pure resize.
  std::vector<std::pair<std::string, Tensor>> params;
};

// Builds a block mapping source (C,H,W) to target (C,H,W); deterministic per rng state.
TransformBlock make_transform_block(TransformKind kind, const Shape& source,
                                    const Shape& target, Rng& rng);

// Applies the block to a (N, C_source, h, w) feature map; output is
// (N, C_target, H_target, W_target).
Tensor apply_transform(const TransformBlock& block, const Tensor& feat);

struct PathwayEntry {
  int i = 0;  // teacher tap index
  int j = 0;  // student tap index
  int k = 0;  // transform kind index within the enumerated kind list
  TransformKind kind = TransformKind::IdentityResize;
  TransformBlock block;
  std::string id;  // "t{i}-s{j}-k{k}"
};

struct PathwaySet {
  std::vector<PathwayEntry> entries;
  int transforms_per_pair = 0;

  size_t size() const { return entries.size(); }
  std::vector<std::string> ids() const;
  // Entry-id-prefixed parameter names, declaration order; part of theta.
  std::vector<std::pair<std::string, Tensor>> named_params();
  void set_requires_grad(bool value);
  PathwaySet clone() const;
};

std::string pathway_id(int i, int j, int k);

// Full cross product of teacher taps x student taps x kinds. The probe input
// must match both specs' input shape; tap shapes come from static inference.
PathwaySet enumerate_pathways(const NetworkSpec& student, const NetworkSpec& teacher,
                              const std::vector<TransformKind>& kinds,
                              const Tensor& probe_input, uint64_t seed);

// delta(transform(student tap j), teacher tap i); the teacher tap is detached
// so no gradient can reach teacher parameters. Counts one pathway evaluation.
Tensor pathway_loss(const PathwayEntry& entry, const std::vector<Tensor>& student_taps,
                    const std::vector<Tensor>& teacher_taps, DistanceKind delta);

}  // namespace distsearch
