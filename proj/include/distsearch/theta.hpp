#pragma once

#include <vector>

#include "distsearch/network.hpp"
#include "distsearch/pathway.hpp"

namespace distsearch {

// Joint flat view over the inner parameters of the bilevel problem: student
// weights followed by pathway transform weights, in declaration order. The
// view aliases the underlying tensors, so assign() writes straight through.
class ThetaView {
 public:
  ThetaView() = default;
  ThetaView(Network& student, PathwaySet& pathways);

  size_t size() const { return size_; }
  std::vector<double> flatten() const;
  void assign(const std::vector<double>& flat);
  std::vector<double> flat_grads() const;  // zeros where a tensor has no grad
  void zero_grads();

 private:
  std::vector<Tensor> tensors_;
  size_t size_ = 0;
};

}  // namespace distsearch
