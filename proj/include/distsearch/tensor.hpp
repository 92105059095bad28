#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace distsearch {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct TensorNode;
}

// Dense float64 tensor participating in a reverse-mode computation graph.
// Copies are shallow handles to the same node; op outputs are fresh nodes.
// Graph recording happens only when an input requires grad. Leaf data may be
// mutated through raw_data() between graph builds (optimizer updates); nodes
// inside a recorded graph are never mutated.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_vector(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int64_t dim(size_t i) const;
  bool requires_grad() const;

  std::span<const double> data() const;
  std::span<double> raw_data();  // leaf mutation between graph builds
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  double item() const;  // value of a single-element tensor
  double at(std::initializer_list<int64_t> idx) const;

  // Value copy detached from any graph (no inputs, no grad requirement).
  Tensor detached() const;
  // Deep copy preserving requires_grad; always a leaf.
  Tensor clone() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

// ---- forward ops (each records its backward when an input requires grad) ----

Tensor matmul(const Tensor& a, const Tensor& b);
// input (N,Cin,H,W) * kernel (Cout,Cin,kh,kw), zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int64_t stride,
              int64_t pad);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor mul(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor softmax(const Tensor& x, int64_t axis);
// softmax over concat(raw, bias_logit) with the bias entry dropped: entries
// are positive and sum to strictly less than one.
Tensor biased_softmax(const Tensor& raw, double bias_logit);
// x / (sum|x| + (add_one ? 1 : 0)) for 1-D x.
Tensor l1_normalize(const Tensor& x, bool add_one);
// align-corners bilinear resize of (N,C,H,W) maps; endpoint-preserving.
Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);
Tensor avg_pool(const Tensor& x, int64_t kernel, int64_t stride);
Tensor global_avg_pool(const Tensor& x);
// mean over the batch of softmax cross-entropy against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
Tensor mse_loss(const Tensor& a, const Tensor& b);  // mean squared distance
Tensor l1_loss(const Tensor& a, const Tensor& b);   // mean absolute distance
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor stack_scalars(const std::vector<Tensor>& xs);  // -> 1-D
Tensor gather(const Tensor& x, const std::vector<int64_t>& indices);  // 1-D
// dot(weights, values) -> scalar; gradient flows into both sides.
Tensor weighted_sum(const Tensor& weights, const Tensor& values);

// Reverse-mode sweep from a scalar loss. Gradients accumulate (+=) into every
// reachable tensor that requires grad, visited in reverse topological order.
void backward(const Tensor& loss);

// ---- gradient checking ----

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = true;
  std::string summary() const;
};

// Compares backward() gradients of f's scalar output against central finite
// differences for every element of every listed parameter. f must be
// deterministic and rebuild its graph from the live param tensors each call.
GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h = 1e-5, double tol = 1e-5,
                           double denom_floor = 1e-6);

}  // namespace distsearch
