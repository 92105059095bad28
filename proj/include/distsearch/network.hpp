#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "distsearch/data.hpp"
#include "distsearch/tensor.hpp"

namespace distsearch {

enum class LayerKind { Conv, Relu, Pool, Linear };

struct LayerDesc {
  LayerKind kind;
  int64_t out = 0;     // conv: output channels; linear: output features
  int64_t kernel = 0;  // conv/pool kernel extent
  int64_t stride = 1;  // conv/pool stride
  int64_t pad = 0;     // conv zero padding
};

// Layered architecture description with tapped feature maps. Canonical text
// form (round-trips exactly):
//   input:C:H:W conv:OUT:K:S:P relu pool:K:S tap ... linear:OUT classes:N
// where a "tap" token marks the preceding layer's output as a distillation
// tap. Taps must sit on 3-D feature maps (before any linear layer).
struct NetworkSpec {
  Shape input_shape;  // (C, H, W)
  std::vector<LayerDesc> layers;
  std::vector<size_t> tap_indices;
  int num_classes = 0;

  std::string to_text() const;
  static NetworkSpec parse(const std::string& text);

  void validate() const;  // throws SpecError on any inconsistency

  // Static shape inference. Feature maps are (C,H,W); flattened activations
  // after a linear layer are (features).
  std::vector<Shape> layer_output_shapes() const;
  std::vector<Shape> tap_shapes() const;
};

struct ForwardResult {
  Tensor logits;              // (batch, num_classes)
  std::vector<Tensor> taps;   // one per tap index, shallow to deep
};

class Network {
 public:
  Network() = default;
  // Uniform fan-in initialization: every weight and bias of a layer drawn
  // from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), layer order, weight before bias.
  Network(NetworkSpec spec, uint64_t seed, std::string role = "student");

  const NetworkSpec& spec() const { return spec_; }
  const std::string& role() const { return role_; }
  void set_role(std::string role) { role_ = std::move(role); }

  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  Tensor param(const std::string& name) const;
  int64_t param_count() const;

  void set_requires_grad(bool value);
  void freeze() { set_requires_grad(false); }

  Network clone() const;  // deep copy of spec, params, role

  // Runs the layer stack, recording tapped activations. Counts one forward
  // against this network's role.
  ForwardResult forward_with_taps(const Tensor& batch) const;
  Tensor forward(const Tensor& batch) const;

  // Flat parameter vector view (concatenation in declaration order); used by
  // the bilevel search to treat the student as a single theta vector.
  std::vector<double> flat_params() const;
  void set_flat_params(const std::vector<double>& values);
  std::vector<double> flat_grads() const;  // zeros where a param has no grad
  void zero_grads();

 private:
  NetworkSpec spec_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::string role_ = "student";
};

// Reference desk-scale architectures: three conv/relu/pool stages with a tap
// after each pool, then a classifier head.
NetworkSpec reference_teacher_spec(int num_classes, const Shape& input = {1, 16, 16});
NetworkSpec reference_student_spec(int num_classes, const Shape& input = {1, 16, 16});
// Two-stage variants for fast tests.
NetworkSpec small_teacher_spec(int num_classes, const Shape& input = {1, 16, 16});
NetworkSpec small_student_spec(int num_classes, const Shape& input = {1, 16, 16});

struct PretrainResult {
  Network net;
  std::vector<double> step_losses;
};

// SGD with momentum over cross-entropy on the split's training partition.
// Returns a trained copy; the input network is untouched. Zero epochs returns
// an identical copy.
PretrainResult pretrain(const Network& net, const DatasetSplit& data, int64_t epochs,
                        double lr, uint64_t seed, int64_t batch_size = 64,
                        double momentum = 0.9);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

EvalResult evaluate(const Network& net, const DatasetView& view, int64_t batch_size = 256);

// "DPCK" checkpoint: magic, version u32, canonical spec text, named float64
// little-endian parameter blobs.
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace distsearch
