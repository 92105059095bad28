#include "distsearch/theta.hpp"

#include <algorithm>

#include "distsearch/errors.hpp"

namespace distsearch {

ThetaView::ThetaView(Network& student, PathwaySet& pathways) {
  for (auto& [name, t] : student.params()) tensors_.push_back(t);
  for (auto& [name, t] : pathways.named_params()) tensors_.push_back(t);
  for (auto& t : tensors_) size_ += static_cast<size_t>(t.numel());
}

std::vector<double> ThetaView::flatten() const {
  std::vector<double> out;
  out.reserve(size_);
  for (auto& t : tensors_) {
    auto d = t.data();
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

void ThetaView::assign(const std::vector<double>& flat) {
  if (flat.size() != size_)
    throw ContractError("theta view: got " + std::to_string(flat.size()) + " values for " +
                        std::to_string(size_) + " parameters");
  size_t offset = 0;
  for (auto& t : tensors_) {
    auto d = t.raw_data();
    std::copy(flat.begin() + offset,
              flat.begin() + static_cast<ptrdiff_t>(offset + d.size()), d.begin());
    offset += d.size();
  }
}

std::vector<double> ThetaView::flat_grads() const {
  std::vector<double> out;
  out.reserve(size_);
  for (auto& t : tensors_) {
    if (t.has_grad()) {
      auto g = t.grad();
      out.insert(out.end(), g.begin(), g.end());
    } else {
      out.insert(out.end(), static_cast<size_t>(t.numel()), 0.0);
    }
  }
  return out;
}

void ThetaView::zero_grads() {
  for (auto& t : tensors_) t.zero_grad();
}

}  // namespace distsearch
