#include "distsearch/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "distsearch/counters.hpp"
#include "distsearch/errors.hpp"

namespace distsearch {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // sized lazily during backward
  const char* op = "";       // empty for leaves
  std::vector<std::shared_ptr<TensorNode>> inputs;
  std::function<void(TensorNode&)> backward_fn;

  int64_t numel() const { return static_cast<int64_t>(data.size()); }

  std::vector<double>& grad_buf() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

namespace {

NodePtr new_node(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  const int64_t count = shape_numel(shape);
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(count), 0.0);
  return n;
}

void check_positive_shape(const char* op, const Shape& s) {
  for (int64_t d : s)
    if (d <= 0)
      throw ShapeError(std::string(op) + ": nonpositive extent in shape " + shape_str(s));
}

void check_defined(const char* op, const Tensor& t) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor argument");
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v))
      throw NumericError(std::string(op) + ": non-finite input value");
}

void check_rank(const char* op, const Tensor& t, size_t rank) {
  if (t.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     " tensor, got shape " + shape_str(t.shape()));
}

// Wraps a computed node: records inputs and the backward closure only when a
// gradient will be needed.
Tensor finish(NodePtr out, const char* op, const std::vector<Tensor>& inputs,
              std::function<void(TensorNode&)> bw) {
  out->op = op;
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  if (rg) {
    out->requires_grad = true;
    out->inputs.reserve(inputs.size());
    for (const auto& t : inputs) out->inputs.push_back(t.node());
    out->backward_fn = std::move(bw);
  }
  return Tensor(std::move(out));
}

// Effective strides of `in` right-aligned against `out`; zero in broadcast dims.
std::vector<int64_t> effective_strides(const Shape& out, const Shape& in) {
  const int64_t rank = static_cast<int64_t>(out.size());
  const int64_t irank = static_cast<int64_t>(in.size());
  std::vector<int64_t> istr(irank);
  int64_t s = 1;
  for (int64_t i = irank - 1; i >= 0; --i) {
    istr[i] = s;
    s *= in[i];
  }
  std::vector<int64_t> strides(rank, 0);
  for (int64_t i = 0; i < rank; ++i) {
    const int64_t ii = i - (rank - irank);
    if (ii >= 0 && in[ii] != 1) strides[i] = istr[ii];
  }
  return strides;
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (size_t i = 0; i < rank; ++i) {
    const int64_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int64_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                       shape_str(b) + " are not broadcastable");
    out[i] = std::max(da, db);
  }
  return out;
}

// Calls f(out_idx, a_idx, b_idx) for every element of the broadcast output.
template <typename F>
void broadcast_iter(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const int64_t n = shape_numel(out);
  const int64_t rank = static_cast<int64_t>(out.size());
  if (rank == 0) {
    f(0, 0, 0);
    return;
  }
  const auto sa = effective_strides(out, a);
  const auto sb = effective_strides(out, b);
  std::vector<int64_t> idx(rank, 0);
  int64_t ao = 0, bo = 0;
  for (int64_t oi = 0; oi < n; ++oi) {
    f(oi, ao, bo);
    for (int64_t d = rank - 1; d >= 0; --d) {
      ++idx[d];
      ao += sa[d];
      bo += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ao -= sa[d] * out[d];
      bo -= sb[d] * out[d];
    }
  }
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---- Tensor handle ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_positive_shape("zeros", shape);
  auto n = new_node(std::move(shape));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->data.begin(), t.node_->data.end(), value);
  return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<double> values, bool requires_grad) {
  check_positive_shape("from_vector", shape);
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("from_vector: shape " + shape_str(shape) + " expects " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_vector({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  check_defined("shape", *this);
  return node_->shape;
}

int64_t Tensor::numel() const {
  check_defined("numel", *this);
  return node_->numel();
}

int64_t Tensor::dim(size_t i) const {
  const Shape& s = shape();
  if (i >= s.size())
    throw ShapeError("dim: index " + std::to_string(i) + " out of range for " + shape_str(s));
  return s[i];
}

bool Tensor::requires_grad() const {
  check_defined("requires_grad", *this);
  return node_->requires_grad;
}

std::span<const double> Tensor::data() const {
  check_defined("data", *this);
  return node_->data;
}

std::span<double> Tensor::raw_data() {
  check_defined("raw_data", *this);
  if (!node_->inputs.empty())
    throw ContractError("raw_data: tensor is an op output inside a recorded graph");
  return node_->data;
}

bool Tensor::has_grad() const {
  check_defined("has_grad", *this);
  return !node_->grad.empty();
}

std::span<const double> Tensor::grad() const {
  check_defined("grad", *this);
  if (node_->grad.empty())
    throw ContractError("grad: no gradient present (run backward first)");
  return node_->grad;
}

void Tensor::zero_grad() {
  check_defined("zero_grad", *this);
  node_->grad.clear();
}

double Tensor::item() const {
  if (numel() != 1)
    throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  const Shape& s = shape();
  if (idx.size() != s.size())
    throw ShapeError("at: index rank mismatch for shape " + shape_str(s));
  int64_t off = 0;
  size_t d = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= s[d]) throw ShapeError("at: index out of bounds");
    off = off * s[d] + i;
    ++d;
  }
  return node_->data[static_cast<size_t>(off)];
}

Tensor Tensor::detached() const {
  check_defined("detached", *this);
  auto n = std::make_shared<TensorNode>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
  check_defined("clone", *this);
  auto n = std::make_shared<TensorNode>();
  n->shape = node_->shape;
  n->data = node_->data;
  n->requires_grad = node_->requires_grad;
  return Tensor(std::move(n));
}

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined("matmul", a);
  check_defined("matmul", b);
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     " x " + shape_str(b.shape()));
  check_finite("matmul", a);
  check_finite("matmul", b);
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = new_node({m, n});
  {
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out->data.data();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t l = 0; l < k; ++l) {
        const double av = pa[i * k + l];
        for (int64_t j = 0; j < n; ++j) po[i * n + j] += av * pb[l * n + j];
      }
  }
  return finish(std::move(out), "matmul", {a, b}, [a, b, m, k, n](TensorNode& self) {
    const double* go = self.grad.data();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    if (a.requires_grad()) {
      double* ga = a.node()->grad_buf().data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
          const double g = go[i * n + j];
          for (int64_t l = 0; l < k; ++l) ga[i * k + l] += g * pb[l * n + j];
        }
    }
    if (b.requires_grad()) {
      double* gb = b.node()->grad_buf().data();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t l = 0; l < k; ++l) {
          const double av = pa[i * k + l];
          for (int64_t j = 0; j < n; ++j) gb[l * n + j] += av * go[i * n + j];
        }
    }
  });
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int64_t stride, int64_t pad) {
  check_defined("conv2d", input);
  check_defined("conv2d", kernel);
  check_rank("conv2d", input, 4);
  check_rank("conv2d", kernel, 4);
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  const int64_t batch = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int64_t co = kernel.dim(0), kc = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (ci != kc)
    throw ShapeError("conv2d: input channels != kernel channels, input " +
                     shape_str(input.shape()) + ", kernel " + shape_str(kernel.shape()));
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw ShapeError("conv2d: kernel " + shape_str(kernel.shape()) +
                     " larger than padded input " + shape_str(input.shape()));
  check_finite("conv2d", input);
  check_finite("conv2d", kernel);
  auto out = new_node({batch, co, oh, ow});
  {
    const double* px = input.data().data();
    const double* pk = kernel.data().data();
    double* po = out->data.data();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t o = 0; o < co; ++o)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (int64_t c = 0; c < ci; ++c)
              for (int64_t r = 0; r < kh; ++r) {
                const int64_t iy = y * stride - pad + r;
                if (iy < 0 || iy >= h) continue;
                const double* xrow = px + ((b * ci + c) * h + iy) * w;
                const double* krow = pk + ((o * ci + c) * kh + r) * kw;
                for (int64_t s = 0; s < kw; ++s) {
                  const int64_t ix = x * stride - pad + s;
                  if (ix < 0 || ix >= w) continue;
                  acc += xrow[ix] * krow[s];
                }
              }
            po[((b * co + o) * oh + y) * ow + x] = acc;
          }
  }
  return finish(std::move(out), "conv2d", {input, kernel},
                [input, kernel, stride, pad, batch, ci, h, w, co, kh, kw, oh,
                 ow](TensorNode& self) {
    const double* go = self.grad.data();
    const double* px = input.data().data();
    const double* pk = kernel.data().data();
    double* gx = input.requires_grad() ? input.node()->grad_buf().data() : nullptr;
    double* gk = kernel.requires_grad() ? kernel.node()->grad_buf().data() : nullptr;
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t o = 0; o < co; ++o)
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t x = 0; x < ow; ++x) {
            const double g = go[((b * co + o) * oh + y) * ow + x];
            if (g == 0.0) continue;
            for (int64_t c = 0; c < ci; ++c)
              for (int64_t r = 0; r < kh; ++r) {
                const int64_t iy = y * stride - pad + r;
                if (iy < 0 || iy >= h) continue;
                for (int64_t s = 0; s < kw; ++s) {
                  const int64_t ix = x * stride - pad + s;
                  if (ix < 0 || ix >= w) continue;
                  const int64_t xoff = ((b * ci + c) * h + iy) * w + ix;
                  const int64_t koff = ((o * ci + c) * kh + r) * kw + s;
                  if (gx) gx[xoff] += g * pk[koff];
                  if (gk) gk[koff] += g * px[xoff];
                }
              }
          }
  });
}

Tensor relu(const Tensor& x) {
  check_defined("relu", x);
  check_finite("relu", x);
  auto out = new_node(x.shape());
  const auto in = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = in[i] > 0.0 ? in[i] : 0.0;
  return finish(std::move(out), "relu", {x}, [x](TensorNode& self) {
    if (!x.requires_grad()) return;
    const auto in = x.data();
    double* gx = x.node()->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (in[i] > 0.0) gx[i] += self.grad[i];
  });
}

Tensor sigmoid(const Tensor& x) {
  check_defined("sigmoid", x);
  check_finite("sigmoid", x);
  auto out = new_node(x.shape());
  const auto in = x.data();
  for (int64_t i = 0; i < x.numel(); ++i) out->data[i] = stable_sigmoid(in[i]);
  return finish(std::move(out), "sigmoid", {x}, [x](TensorNode& self) {
    if (!x.requires_grad()) return;
    double* gx = x.node()->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.data[i];
      gx[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

namespace {

enum class BinaryKind { Add, Mul };

Tensor binary_broadcast(BinaryKind kind, const char* name, const Tensor& a, const Tensor& b) {
  check_defined(name, a);
  check_defined(name, b);
  check_finite(name, a);
  check_finite(name, b);
  Shape oshape = broadcast_shape(name, a.shape(), b.shape());
  auto out = new_node(oshape);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out->data.data();
  if (kind == BinaryKind::Add) {
    broadcast_iter(oshape, a.shape(), b.shape(),
                   [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = pa[ai] + pb[bi]; });
  } else {
    broadcast_iter(oshape, a.shape(), b.shape(),
                   [&](int64_t oi, int64_t ai, int64_t bi) { po[oi] = pa[ai] * pb[bi]; });
  }
  return finish(std::move(out), name, {a, b}, [kind, a, b](TensorNode& self) {
    const double* go = self.grad.data();
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* ga = a.requires_grad() ? a.node()->grad_buf().data() : nullptr;
    double* gb = b.requires_grad() ? b.node()->grad_buf().data() : nullptr;
    broadcast_iter(self.shape, a.shape(), b.shape(), [&](int64_t oi, int64_t ai, int64_t bi) {
      if (kind == BinaryKind::Add) {
        if (ga) ga[ai] += go[oi];
        if (gb) gb[bi] += go[oi];
      } else {
        if (ga) ga[ai] += go[oi] * pb[bi];
        if (gb) gb[bi] += go[oi] * pa[ai];
      }
    });
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(BinaryKind::Add, "add", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast(BinaryKind::Mul, "mul", a, b); }

Tensor softmax(const Tensor& x, int64_t axis) {
  check_defined("softmax", x);
  const Shape& s = x.shape();
  if (axis < 0 || axis >= static_cast<int64_t>(s.size()))
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  check_finite("softmax", x);
  const int64_t len = s[axis];
  int64_t outer = 1, inner = 1;
  for (int64_t i = 0; i < axis; ++i) outer *= s[i];
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  auto out = new_node(s);
  const double* px = x.data().data();
  double* po = out->data.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * len * inner + i;
      double m = px[base];
      for (int64_t l = 1; l < len; ++l) m = std::max(m, px[base + l * inner]);
      double z = 0.0;
      for (int64_t l = 0; l < len; ++l) {
        const double e = std::exp(px[base + l * inner] - m);
        po[base + l * inner] = e;
        z += e;
      }
      for (int64_t l = 0; l < len; ++l) po[base + l * inner] /= z;
    }
  return finish(std::move(out), "softmax", {x}, [x, len, outer, inner](TensorNode& self) {
    if (!x.requires_grad()) return;
    const double* go = self.grad.data();
    const double* py = self.data.data();
    double* gx = x.node()->grad_buf().data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t base = o * len * inner + i;
        double dot = 0.0;
        for (int64_t l = 0; l < len; ++l) dot += go[base + l * inner] * py[base + l * inner];
        for (int64_t l = 0; l < len; ++l) {
          const int64_t k = base + l * inner;
          gx[k] += py[k] * (go[k] - dot);
        }
      }
  });
}

Tensor biased_softmax(const Tensor& raw, double bias_logit) {
  check_defined("biased_softmax", raw);
  check_rank("biased_softmax", raw, 1);
  check_finite("biased_softmax", raw);
  if (!std::isfinite(bias_logit)) throw NumericError("biased_softmax: non-finite bias logit");
  const int64_t n = raw.numel();
  auto out = new_node(raw.shape());
  const double* px = raw.data().data();
  double m = bias_logit;
  for (int64_t i = 0; i < n; ++i) m = std::max(m, px[i]);
  double z = std::exp(bias_logit - m);
  for (int64_t i = 0; i < n; ++i) {
    out->data[i] = std::exp(px[i] - m);
    z += out->data[i];
  }
  for (int64_t i = 0; i < n; ++i) out->data[i] /= z;
  return finish(std::move(out), "biased_softmax", {raw}, [raw, n](TensorNode& self) {
    if (!raw.requires_grad()) return;
    const double* go = self.grad.data();
    const double* py = self.data.data();
    double* gx = raw.node()->grad_buf().data();
    double dot = 0.0;
    for (int64_t i = 0; i < n; ++i) dot += go[i] * py[i];
    for (int64_t i = 0; i < n; ++i) gx[i] += py[i] * (go[i] - dot);
  });
}

Tensor l1_normalize(const Tensor& x, bool add_one) {
  check_defined("l1_normalize", x);
  check_rank("l1_normalize", x, 1);
  check_finite("l1_normalize", x);
  const int64_t n = x.numel();
  const double* px = x.data().data();
  double s = add_one ? 1.0 : 0.0;
  for (int64_t i = 0; i < n; ++i) s += std::abs(px[i]);
  if (s == 0.0) throw NumericError("l1_normalize: zero norm without bias");
  auto out = new_node(x.shape());
  for (int64_t i = 0; i < n; ++i) out->data[i] = px[i] / s;
  return finish(std::move(out), "l1_normalize", {x}, [x, n, s](TensorNode& self) {
    if (!x.requires_grad()) return;
    const double* go = self.grad.data();
    const double* px2 = x.data().data();
    double* gx = x.node()->grad_buf().data();
    double dot = 0.0;
    for (int64_t i = 0; i < n; ++i) dot += go[i] * px2[i];
    for (int64_t i = 0; i < n; ++i) {
      const double sign = px2[i] > 0.0 ? 1.0 : (px2[i] < 0.0 ? -1.0 : 0.0);
      gx[i] += go[i] / s - dot * sign / (s * s);
    }
  });
}

namespace {

struct ResizeAxis {
  std::vector<int64_t> lo, hi;
  std::vector<double> frac;
};

ResizeAxis resize_axis(int64_t in, int64_t out) {
  ResizeAxis ax;
  ax.lo.resize(out);
  ax.hi.resize(out);
  ax.frac.resize(out);
  for (int64_t o = 0; o < out; ++o) {
    const double src = out == 1 ? 0.0
                                : static_cast<double>(o) * static_cast<double>(in - 1) /
                                      static_cast<double>(out - 1);
    const int64_t lo = static_cast<int64_t>(std::floor(src));
    ax.lo[o] = std::min(lo, in - 1);
    ax.hi[o] = std::min(ax.lo[o] + 1, in - 1);
    ax.frac[o] = src - static_cast<double>(ax.lo[o]);
  }
  return ax;
}

}  // namespace

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
  check_defined("bilinear_resize", x);
  check_rank("bilinear_resize", x, 4);
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: output extents must be >= 1");
  check_finite("bilinear_resize", x);
  const int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto out = new_node({batch, ch, out_h, out_w});
  if (out_h == h && out_w == w) {
    out->data.assign(x.data().begin(), x.data().end());
    return finish(std::move(out), "bilinear_resize", {x}, [x](TensorNode& self) {
      if (!x.requires_grad()) return;
      double* gx = x.node()->grad_buf().data();
      for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
  }
  const ResizeAxis ay = resize_axis(h, out_h);
  const ResizeAxis axx = resize_axis(w, out_w);
  {
    const double* px = x.data().data();
    double* po = out->data.data();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < ch; ++c) {
        const double* plane = px + (b * ch + c) * h * w;
        double* oplane = po + (b * ch + c) * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
          const double fy = ay.frac[y];
          for (int64_t xw = 0; xw < out_w; ++xw) {
            const double fx = axx.frac[xw];
            const double v00 = plane[ay.lo[y] * w + axx.lo[xw]];
            const double v01 = plane[ay.lo[y] * w + axx.hi[xw]];
            const double v10 = plane[ay.hi[y] * w + axx.lo[xw]];
            const double v11 = plane[ay.hi[y] * w + axx.hi[xw]];
            oplane[y * out_w + xw] = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) +
                                     fy * ((1.0 - fx) * v10 + fx * v11);
          }
        }
      }
  }
  return finish(std::move(out), "bilinear_resize", {x},
                [x, ay, axx, batch, ch, h, w, out_h, out_w](TensorNode& self) {
    if (!x.requires_grad()) return;
    const double* go = self.grad.data();
    double* gx = x.node()->grad_buf().data();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < ch; ++c) {
        double* gplane = gx + (b * ch + c) * h * w;
        const double* oplane = go + (b * ch + c) * out_h * out_w;
        for (int64_t y = 0; y < out_h; ++y) {
          const double fy = ay.frac[y];
          for (int64_t xw = 0; xw < out_w; ++xw) {
            const double fx = axx.frac[xw];
            const double g = oplane[y * out_w + xw];
            gplane[ay.lo[y] * w + axx.lo[xw]] += g * (1.0 - fy) * (1.0 - fx);
            gplane[ay.lo[y] * w + axx.hi[xw]] += g * (1.0 - fy) * fx;
            gplane[ay.hi[y] * w + axx.lo[xw]] += g * fy * (1.0 - fx);
            gplane[ay.hi[y] * w + axx.hi[xw]] += g * fy * fx;
          }
        }
      }
  });
}

Tensor avg_pool(const Tensor& x, int64_t kernel, int64_t stride) {
  check_defined("avg_pool", x);
  check_rank("avg_pool", x, 4);
  if (kernel < 1 || stride < 1) throw ShapeError("avg_pool: kernel and stride must be >= 1");
  const int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel || w < kernel)
    throw ShapeError("avg_pool: kernel " + std::to_string(kernel) +
                     " exceeds spatial extent of " + shape_str(x.shape()));
  check_finite("avg_pool", x);
  const int64_t oh = (h - kernel) / stride + 1;
  const int64_t ow = (w - kernel) / stride + 1;
  const double inv = 1.0 / static_cast<double>(kernel * kernel);
  auto out = new_node({batch, ch, oh, ow});
  {
    const double* px = x.data().data();
    double* po = out->data.data();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < ch; ++c) {
        const double* plane = px + (b * ch + c) * h * w;
        double* oplane = po + (b * ch + c) * oh * ow;
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t xw = 0; xw < ow; ++xw) {
            double acc = 0.0;
            for (int64_t r = 0; r < kernel; ++r)
              for (int64_t s = 0; s < kernel; ++s)
                acc += plane[(y * stride + r) * w + (xw * stride + s)];
            oplane[y * ow + xw] = acc * inv;
          }
      }
  }
  return finish(std::move(out), "avg_pool", {x},
                [x, kernel, stride, batch, ch, h, w, oh, ow, inv](TensorNode& self) {
    if (!x.requires_grad()) return;
    const double* go = self.grad.data();
    double* gx = x.node()->grad_buf().data();
    for (int64_t b = 0; b < batch; ++b)
      for (int64_t c = 0; c < ch; ++c) {
        double* gplane = gx + (b * ch + c) * h * w;
        const double* oplane = go + (b * ch + c) * oh * ow;
        for (int64_t y = 0; y < oh; ++y)
          for (int64_t xw = 0; xw < ow; ++xw) {
            const double g = oplane[y * ow + xw] * inv;
            for (int64_t r = 0; r < kernel; ++r)
              for (int64_t s = 0; s < kernel; ++s)
                gplane[(y * stride + r) * w + (xw * stride + s)] += g;
          }
      }
  });
}

Tensor global_avg_pool(const Tensor& x) {
  check_defined("global_avg_pool", x);
  check_rank("global_avg_pool", x, 4);
  check_finite("global_avg_pool", x);
  const int64_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const double inv = 1.0 / static_cast<double>(h * w);
  auto out = new_node({batch, ch, 1, 1});
  const double* px = x.data().data();
  for (int64_t i = 0; i < batch * ch; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < h * w; ++j) acc += px[i * h * w + j];
    out->data[i] = acc * inv;
  }
  return finish(std::move(out), "global_avg_pool", {x}, [x, batch, ch, h, w, inv](TensorNode& self) {
    if (!x.requires_grad()) return;
    double* gx = x.node()->grad_buf().data();
    for (int64_t i = 0; i < batch * ch; ++i) {
      const double g = self.grad[i] * inv;
      for (int64_t j = 0; j < h * w; ++j) gx[i * h * w + j] += g;
    }
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_defined("cross_entropy", logits);
  check_rank("cross_entropy", logits, 2);
  const int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  for (int64_t i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= c)
      throw ContractError("cross_entropy: label " + std::to_string(labels[i]) +
                          " out of range [0," + std::to_string(c) + ") at row " + std::to_string(i));
  check_finite("cross_entropy", logits);
  auto out = new_node(Shape{});
  const double* px = logits.data().data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double* row = px + i * c;
    double m = row[0];
    for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
    total += m + std::log(z) - row[labels[i]];
  }
  out->data[0] = total / static_cast<double>(n);
  return finish(std::move(out), "cross_entropy", {logits}, [logits, labels, n, c](TensorNode& self) {
    if (!logits.requires_grad()) return;
    const double g = self.grad[0] / static_cast<double>(n);
    const double* px = logits.data().data();
    double* gx = logits.node()->grad_buf().data();
    for (int64_t i = 0; i < n; ++i) {
      const double* row = px + i * c;
      double m = row[0];
      for (int64_t j = 1; j < c; ++j) m = std::max(m, row[j]);
      double z = 0.0;
      for (int64_t j = 0; j < c; ++j) z += std::exp(row[j] - m);
      for (int64_t j = 0; j < c; ++j) {
        const double p = std::exp(row[j] - m) / z;
        gx[i * c + j] += g * (p - (j == labels[i] ? 1.0 : 0.0));
      }
    }
  });
}

namespace {

Tensor distance_loss(const char* name, bool squared, const Tensor& a, const Tensor& b) {
  check_defined(name, a);
  check_defined(name, b);
  if (a.shape() != b.shape())
    throw ShapeError(std::string(name) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  check_finite(name, a);
  check_finite(name, b);
  const int64_t n = a.numel();
  const double inv = 1.0 / static_cast<double>(n);
  auto out = new_node(Shape{});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pa[i] - pb[i];
    total += squared ? d * d : std::abs(d);
  }
  out->data[0] = total * inv;
  return finish(std::move(out), name, {a, b}, [squared, a, b, n, inv](TensorNode& self) {
    const double g = self.grad[0] * inv;
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* ga = a.requires_grad() ? a.node()->grad_buf().data() : nullptr;
    double* gb = b.requires_grad() ? b.node()->grad_buf().data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      const double d = pa[i] - pb[i];
      const double dd = squared ? 2.0 * d : (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
      if (ga) ga[i] += g * dd;
      if (gb) gb[i] -= g * dd;
    }
  });
}

}  // namespace

Tensor mse_loss(const Tensor& a, const Tensor& b) { return distance_loss("mse_loss", true, a, b); }
Tensor l1_loss(const Tensor& a, const Tensor& b) { return distance_loss("l1_loss", false, a, b); }

Tensor sum(const Tensor& x) {
  check_defined("sum", x);
  check_finite("sum", x);
  auto out = new_node(Shape{});
  double total = 0.0;
  for (double v : x.data()) total += v;
  out->data[0] = total;
  return finish(std::move(out), "sum", {x}, [x](TensorNode& self) {
    if (!x.requires_grad()) return;
    const double g = self.grad[0];
    double* gx = x.node()->grad_buf().data();
    for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
  });
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_defined("reshape", x);
  int64_t known = 1;
  int64_t infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) throw ShapeError("reshape: more than one inferred extent");
      infer = static_cast<int64_t>(i);
    } else if (new_shape[i] <= 0) {
      throw ShapeError("reshape: invalid shape " + shape_str(new_shape));
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    if (x.numel() % known != 0)
      throw ShapeError("reshape: cannot infer extent for " + shape_str(x.shape()) + " -> " +
                       shape_str(new_shape));
    new_shape[infer] = x.numel() / known;
    known *= new_shape[infer];
  }
  if (known != x.numel())
    throw ShapeError("reshape: element count mismatch, " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  auto out = std::make_shared<TensorNode>();
  out->shape = std::move(new_shape);
  out->data.assign(x.data().begin(), x.data().end());
  return finish(std::move(out), "reshape", {x}, [x](TensorNode& self) {
    if (!x.requires_grad()) return;
    double* gx = x.node()->grad_buf().data();
    for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor stack_scalars(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars: empty input list");
  auto out = new_node({static_cast<int64_t>(xs.size())});
  for (size_t i = 0; i < xs.size(); ++i) {
    check_defined("stack_scalars", xs[i]);
    if (xs[i].numel() != 1)
      throw ShapeError("stack_scalars: input " + std::to_string(i) + " has shape " +
                       shape_str(xs[i].shape()));
    out->data[i] = xs[i].data()[0];
  }
  return finish(std::move(out), "stack_scalars", xs, [xs](TensorNode& self) {
    for (size_t i = 0; i < xs.size(); ++i)
      if (xs[i].requires_grad()) xs[i].node()->grad_buf()[0] += self.grad[i];
  });
}

Tensor gather(const Tensor& x, const std::vector<int64_t>& indices) {
  check_defined("gather", x);
  check_rank("gather", x, 1);
  if (indices.empty()) throw ShapeError("gather: empty index list");
  for (int64_t i : indices)
    if (i < 0 || i >= x.numel())
      throw ShapeError("gather: index " + std::to_string(i) + " out of range for " +
                       shape_str(x.shape()));
  auto out = new_node({static_cast<int64_t>(indices.size())});
  const auto in = x.data();
  for (size_t i = 0; i < indices.size(); ++i) out->data[i] = in[indices[i]];
  return finish(std::move(out), "gather", {x}, [x, indices](TensorNode& self) {
    if (!x.requires_grad()) return;
    double* gx = x.node()->grad_buf().data();
    for (size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += self.grad[i];
  });
}

Tensor weighted_sum(const Tensor& weights, const Tensor& values) {
  check_defined("weighted_sum", weights);
  check_defined("weighted_sum", values);
  check_rank("weighted_sum", weights, 1);
  check_rank("weighted_sum", values, 1);
  if (weights.numel() != values.numel())
    throw ShapeError("weighted_sum: length mismatch, " + shape_str(weights.shape()) + " vs " +
                     shape_str(values.shape()));
  check_finite("weighted_sum", weights);
  check_finite("weighted_sum", values);
  auto out = new_node(Shape{});
  const double* pw = weights.data().data();
  const double* pv = values.data().data();
  double total = 0.0;
  for (int64_t i = 0; i < weights.numel(); ++i) total += pw[i] * pv[i];
  out->data[0] = total;
  return finish(std::move(out), "weighted_sum", {weights, values}, [weights, values](TensorNode& self) {
    const double g = self.grad[0];
    const double* pw = weights.data().data();
    const double* pv = values.data().data();
    double* gw = weights.requires_grad() ? weights.node()->grad_buf().data() : nullptr;
    double* gv = values.requires_grad() ? values.node()->grad_buf().data() : nullptr;
    for (int64_t i = 0; i < weights.numel(); ++i) {
      if (gw) gw[i] += g * pv[i];
      if (gv) gv[i] += g * pw[i];
    }
  });
}

// ---- backward ----

void backward(const Tensor& loss) {
  check_defined("backward", loss);
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  counters().backward_passes += 1;
  if (!loss.requires_grad()) return;

  // Post-order DFS gives children-before-parents; replayed in reverse it
  // visits every node after all of its consumers.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next = 0;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node().get()});
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->inputs.size()) {
      TensorNode* child = f.node->inputs[f.next++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buf()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) {
      node->grad_buf();  // consumers may never have touched it
      node->backward_fn(*node);
    }
  }
}

// ---- gradient checking ----

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (pass ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_err;
  for (const auto& e : entries)
    if (!e.pass) os << " [" << e.name << " rel=" << e.max_rel_err << "]";
  return os.str();
}

GradCheckReport grad_check(const std::function<Tensor()>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           double h, double tol, double denom_floor) {
  if (h <= 0.0) throw ContractError("grad_check: step h must be positive");
  GradCheckReport report;

  for (auto p : params) p.second.zero_grad();
  Tensor out = f();
  if (out.numel() != 1) throw ContractError("grad_check: f must return a scalar");
  backward(out);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (p.second.has_grad())
      analytic.emplace_back(p.second.grad().begin(), p.second.grad().end());
    else
      analytic.emplace_back(p.second.numel(), 0.0);
  }

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor param = params[pi].second;
    GradCheckEntry entry;
    entry.name = params[pi].first;
    auto data = param.raw_data();
    for (int64_t i = 0; i < param.numel(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = f().item();
      data[i] = orig - h;
      const double fm = f().item();
      data[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - fd);
      const double rel = abs_err / std::max({std::abs(a), std::abs(fd), denom_floor});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
    }
    entry.pass = entry.max_rel_err <= tol;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace distsearch
