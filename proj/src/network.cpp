#include "distsearch/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "distsearch/binio.hpp"
#include "distsearch/counters.hpp"
#include "distsearch/errors.hpp"
#include "distsearch/rng.hpp"

namespace distsearch {

namespace {

int64_t parse_extent(const std::string& token, const std::string& field) {
  try {
    size_t used = 0;
    const long long v = std::stoll(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw SpecError("network spec: bad integer '" + field + "' in token '" + token + "'");
  }
}

std::vector<std::string> split_fields(const std::string& token) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : token) {
    if (c == ':') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  os << "input:" << input_shape[0] << ":" << input_shape[1] << ":" << input_shape[2];
  size_t next_tap = 0;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& l = layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        os << " conv:" << l.out << ":" << l.kernel << ":" << l.stride << ":" << l.pad;
        break;
      case LayerKind::Relu:
        os << " relu";
        break;
      case LayerKind::Pool:
        os << " pool:" << l.kernel << ":" << l.stride;
        break;
      case LayerKind::Linear:
        os << " linear:" << l.out;
        break;
    }
    if (next_tap < tap_indices.size() && tap_indices[next_tap] == i) {
      os << " tap";
      ++next_tap;
    }
  }
  os << " classes:" << num_classes;
  return os.str();
}

NetworkSpec NetworkSpec::parse(const std::string& text) {
  NetworkSpec spec;
  std::istringstream is(text);
  std::string token;
  bool have_input = false, have_classes = false;
  while (is >> token) {
    if (have_classes)
      throw SpecError("network spec: token '" + token + "' after classes");
    const auto fields = split_fields(token);
    const std::string& head = fields[0];
    if (head == "input") {
      if (have_input) throw SpecError("network spec: duplicate input token");
      if (fields.size() != 4) throw SpecError("network spec: input needs C:H:W");
      spec.input_shape = {parse_extent(token, fields[1]), parse_extent(token, fields[2]),
                          parse_extent(token, fields[3])};
      have_input = true;
      continue;
    }
    if (!have_input) throw SpecError("network spec: must start with input:C:H:W");
    if (head == "conv") {
      if (fields.size() != 5) throw SpecError("network spec: conv needs OUT:K:S:P");
      spec.layers.push_back({LayerKind::Conv, parse_extent(token, fields[1]),
                             parse_extent(token, fields[2]), parse_extent(token, fields[3]),
                             parse_extent(token, fields[4])});
    } else if (head == "relu") {
      if (fields.size() != 1) throw SpecError("network spec: relu takes no fields");
      spec.layers.push_back({LayerKind::Relu});
    } else if (head == "pool") {
      if (fields.size() != 3) throw SpecError("network spec: pool needs K:S");
      spec.layers.push_back({LayerKind::Pool, 0, parse_extent(token, fields[1]),
                             parse_extent(token, fields[2])});
    } else if (head == "linear") {
      if (fields.size() != 2) throw SpecError("network spec: linear needs OUT");
      spec.layers.push_back({LayerKind::Linear, parse_extent(token, fields[1])});
    } else if (head == "tap") {
      if (fields.size() != 1) throw SpecError("network spec: tap takes no fields");
      if (spec.layers.empty()) throw SpecError("network spec: tap before any layer");
      const size_t idx = spec.layers.size() - 1;
      if (!spec.tap_indices.empty() && spec.tap_indices.back() == idx)
        throw SpecError("network spec: duplicate tap on one layer");
      spec.tap_indices.push_back(idx);
    } else if (head == "classes") {
      if (fields.size() != 2) throw SpecError("network spec: classes needs N");
      spec.num_classes = static_cast<int>(parse_extent(token, fields[1]));
      have_classes = true;
    } else {
      throw SpecError("network spec: unknown token '" + token + "'");
    }
  }
  if (!have_input) throw SpecError("network spec: missing input token");
  if (!have_classes) throw SpecError("network spec: missing classes token");
  spec.validate();
  return spec;
}

std::vector<Shape> NetworkSpec::layer_output_shapes() const {
  if (input_shape.size() != 3)
    throw SpecError("network spec: input shape must be (C,H,W), got " + shape_str(input_shape));
  for (int64_t d : input_shape)
    if (d < 1) throw SpecError("network spec: nonpositive input extent in " + shape_str(input_shape));
  std::vector<Shape> out;
  Shape cur = input_shape;
  bool flat = false;
  for (size_t i = 0; i < layers.size(); ++i) {
    const LayerDesc& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Conv: {
        if (flat) throw SpecError("network spec: " + where + ": conv after flatten");
        if (l.out < 1 || l.kernel < 1 || l.stride < 1 || l.pad < 0)
          throw SpecError("network spec: " + where + ": bad conv attributes");
        const int64_t h = cur[1] + 2 * l.pad, w = cur[2] + 2 * l.pad;
        if (h < l.kernel || w < l.kernel)
          throw SpecError("network spec: " + where + ": kernel exceeds padded input " +
                          shape_str(cur));
        cur = {l.out, (h - l.kernel) / l.stride + 1, (w - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::Relu:
        break;
      case LayerKind::Pool: {
        if (flat) throw SpecError("network spec: " + where + ": pool after flatten");
        if (l.kernel < 1 || l.stride < 1)
          throw SpecError("network spec: " + where + ": bad pool attributes");
        if (cur[1] < l.kernel || cur[2] < l.kernel)
          throw SpecError("network spec: " + where + ": pool kernel exceeds input " +
                          shape_str(cur));
        cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1, (cur[2] - l.kernel) / l.stride + 1};
        break;
      }
      case LayerKind::Linear: {
        if (l.out < 1) throw SpecError("network spec: " + where + ": bad linear width");
        cur = {l.out};
        flat = true;
        break;
      }
    }
    out.push_back(cur);
  }
  return out;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw SpecError("network spec: no layers");
  if (num_classes < 1) throw SpecError("network spec: num_classes must be >= 1");
  const auto shapes = layer_output_shapes();  // throws on inconsistency
  if (layers.back().kind != LayerKind::Linear || layers.back().out != num_classes)
    throw SpecError("network spec: last layer must be linear:" + std::to_string(num_classes));
  for (size_t t = 0; t < tap_indices.size(); ++t) {
    if (t > 0 && tap_indices[t] <= tap_indices[t - 1])
      throw SpecError("network spec: tap indices must be strictly increasing");
    if (tap_indices[t] >= layers.size())
      throw SpecError("network spec: tap index out of range");
    if (shapes[tap_indices[t]].size() != 3)
      throw SpecError("network spec: tap " + std::to_string(t) + " sits on a flattened layer");
  }
}

std::vector<Shape> NetworkSpec::tap_shapes() const {
  const auto shapes = layer_output_shapes();
  std::vector<Shape> out;
  out.reserve(tap_indices.size());
  for (size_t idx : tap_indices) out.push_back(shapes[idx]);
  return out;
}

namespace {

Tensor init_uniform(Rng& rng, Shape shape, double bound) {
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from_vector(std::move(shape), std::move(v), true);
}

}  // namespace

Network::Network(NetworkSpec spec, uint64_t seed, std::string role)
    : spec_(std::move(spec)), role_(std::move(role)) {
  spec_.validate();
  Rng rng(seed);
  Shape cur = spec_.input_shape;
  const auto shapes = spec_.layer_output_shapes();
  for (size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerDesc& l = spec_.layers[i];
    const std::string base = "layer" + std::to_string(i);
    if (l.kind == LayerKind::Conv) {
      const int64_t cin = cur[0];
      const double bound = 1.0 / std::sqrt(static_cast<double>(cin * l.kernel * l.kernel));
      params_.emplace_back(base + ".weight",
                           init_uniform(rng, {l.out, cin, l.kernel, l.kernel}, bound));
      params_.emplace_back(base + ".bias", init_uniform(rng, {l.out, 1, 1}, bound));
    } else if (l.kind == LayerKind::Linear) {
      const int64_t fan_in = shape_numel(cur);
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      params_.emplace_back(base + ".weight", init_uniform(rng, {fan_in, l.out}, bound));
      params_.emplace_back(base + ".bias", init_uniform(rng, {l.out}, bound));
    }
    cur = shapes[i];
  }
}

Tensor Network::param(const std::string& name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw ContractError("network: no parameter named '" + name + "'");
}

int64_t Network::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void Network::set_requires_grad(bool value) {
  for (auto& [name, t] : params_) {
    Tensor fresh = Tensor::from_vector(t.shape(),
                                       std::vector<double>(t.data().begin(), t.data().end()),
                                       value);
    t = fresh;
  }
}

Network Network::clone() const {
  Network c;
  c.spec_ = spec_;
  c.role_ = role_;
  c.params_.reserve(params_.size());
  for (const auto& [n, t] : params_) c.params_.emplace_back(n, t.clone());
  return c;
}

ForwardResult Network::forward_with_taps(const Tensor& batch) const {
  if (batch.shape().size() != 4 || batch.dim(1) != spec_.input_shape[0] ||
      batch.dim(2) != spec_.input_shape[1] || batch.dim(3) != spec_.input_shape[2])
    throw ShapeError("network forward (" + role_ + "): batch " + shape_str(batch.shape()) +
                     " does not match input " + shape_str(spec_.input_shape));
  if (role_ == "teacher")
    counters().forward_teacher += 1;
  else
    counters().forward_student += 1;

  ForwardResult res;
  Tensor x = batch;
  size_t pi = 0;
  size_t next_tap = 0;
  for (size_t i = 0; i < spec_.layers.size(); ++i) {
    const LayerDesc& l = spec_.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
        x = add(conv2d(x, params_[pi].second, l.stride, l.pad), params_[pi + 1].second);
        pi += 2;
        break;
      case LayerKind::Relu:
        x = relu(x);
        break;
      case LayerKind::Pool:
        x = avg_pool(x, l.kernel, l.stride);
        break;
      case LayerKind::Linear:
        if (x.shape().size() != 2) x = reshape(x, {batch.dim(0), -1});
        x = add(matmul(x, params_[pi].second), params_[pi + 1].second);
        pi += 2;
        break;
    }
    if (next_tap < spec_.tap_indices.size() && spec_.tap_indices[next_tap] == i) {
      res.taps.push_back(x);
      ++next_tap;
    }
  }
  res.logits = x;
  return res;
}

Tensor Network::forward(const Tensor& batch) const { return forward_with_taps(batch).logits; }

std::vector<double> Network::flat_params() const {
  std::vector<double> v;
  v.reserve(static_cast<size_t>(param_count()));
  for (const auto& [n, t] : params_) v.insert(v.end(), t.data().begin(), t.data().end());
  return v;
}

void Network::set_flat_params(const std::vector<double>& values) {
  if (static_cast<int64_t>(values.size()) != param_count())
    throw ContractError("network: flat parameter vector has " + std::to_string(values.size()) +
                        " entries, expected " + std::to_string(param_count()));
  size_t off = 0;
  for (auto& [n, t] : params_) {
    auto dst = t.raw_data();
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
    off += dst.size();
  }
}

std::vector<double> Network::flat_grads() const {
  std::vector<double> v;
  v.reserve(static_cast<size_t>(param_count()));
  for (const auto& [n, t] : params_) {
    if (t.has_grad())
      v.insert(v.end(), t.grad().begin(), t.grad().end());
    else
      v.insert(v.end(), static_cast<size_t>(t.numel()), 0.0);
  }
  return v;
}

void Network::zero_grads() {
  for (auto& [n, t] : params_) t.zero_grad();
}

namespace {

NetworkSpec staged_spec(const std::vector<int64_t>& channels, int num_classes,
                        const Shape& input) {
  NetworkSpec s;
  s.input_shape = input;
  s.num_classes = num_classes;
  for (int64_t ch : channels) {
    s.layers.push_back({LayerKind::Conv, ch, 3, 1, 1});
    s.layers.push_back({LayerKind::Relu});
    s.layers.push_back({LayerKind::Pool, 0, 2, 2});
    s.tap_indices.push_back(s.layers.size() - 1);
  }
  s.layers.push_back({LayerKind::Linear, num_classes});
  s.validate();
  return s;
}

}  // namespace

NetworkSpec reference_teacher_spec(int num_classes, const Shape& input) {
  return staged_spec({16, 32, 64}, num_classes, input);
}
NetworkSpec reference_student_spec(int num_classes, const Shape& input) {
  return staged_spec({8, 16, 32}, num_classes, input);
}
NetworkSpec small_teacher_spec(int num_classes, const Shape& input) {
  return staged_spec({16, 32}, num_classes, input);
}
NetworkSpec small_student_spec(int num_classes, const Shape& input) {
  return staged_spec({8, 16}, num_classes, input);
}

PretrainResult pretrain(const Network& net, const DatasetSplit& data, int64_t epochs,
                        double lr, uint64_t seed, int64_t batch_size, double momentum) {
  if (epochs < 0) throw ContractError("pretrain: negative epoch count");
  if (lr <= 0.0) throw ContractError("pretrain: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0) throw ContractError("pretrain: momentum outside [0,1)");

  PretrainResult res{net.clone(), {}};
  if (epochs == 0) return res;
  Network& n = res.net;
  n.set_requires_grad(true);

  DatasetView train = data.train();
  if (train.size() == 0) throw ContractError("pretrain: empty training partition");
  BatchStream stream(train, batch_size, seed);
  const int64_t steps = epochs * stream.batches_per_epoch();
  std::vector<double> velocity(static_cast<size_t>(n.param_count()), 0.0);

  for (int64_t step = 0; step < steps; ++step) {
    Batch b = stream.next();
    n.zero_grads();
    double loss_value = 0.0;
    try {
      Tensor loss = cross_entropy(n.forward(b.images), b.labels);
      loss_value = loss.item();
      backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("pretrain: step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(loss_value))
      throw NumericError("pretrain: non-finite loss at step " + std::to_string(step));
    res.step_losses.push_back(loss_value);

    const auto g = n.flat_grads();
    auto p = n.flat_params();
    for (size_t i = 0; i < velocity.size(); ++i) {
      velocity[i] = momentum * velocity[i] + g[i];
      p[i] -= lr * velocity[i];
    }
    n.set_flat_params(p);
  }
  return res;
}

EvalResult evaluate(const Network& net, const DatasetView& view, int64_t batch_size) {
  if (view.size() == 0) throw ContractError("evaluate: empty view");
  if (batch_size < 1) throw ContractError("evaluate: batch size must be >= 1");
  double loss_sum = 0.0;
  int64_t hits = 0;
  for (int64_t start = 0; start < view.size(); start += batch_size) {
    const int64_t take = std::min(batch_size, view.size() - start);
    std::vector<int64_t> positions(static_cast<size_t>(take));
    for (int64_t i = 0; i < take; ++i) positions[static_cast<size_t>(i)] = start + i;
    Batch b = view.gather(positions);
    Tensor logits = net.forward(b.images);
    loss_sum += cross_entropy(logits, b.labels).item() * static_cast<double>(take);
    const int64_t classes = logits.dim(1);
    for (int64_t r = 0; r < take; ++r) {
      int best = 0;
      for (int c = 1; c < classes; ++c)
        if (logits.at({r, c}) > logits.at({r, best})) best = c;
      if (best == b.labels[static_cast<size_t>(r)]) ++hits;
    }
  }
  return {static_cast<double>(hits) / static_cast<double>(view.size()),
          loss_sum / static_cast<double>(view.size())};
}

namespace {
constexpr char kDpckMagic[4] = {'D', 'P', 'C', 'K'};
constexpr uint32_t kDpckVersion = 1;
}  // namespace

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("DPCK: cannot open " + path + " for writing");
  binio::write_magic(os, kDpckMagic);
  binio::write_u32(os, kDpckVersion);
  const std::string text = net.spec().to_text();
  binio::write_u32(os, static_cast<uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  binio::write_u32(os, static_cast<uint32_t>(net.params().size()));
  for (const auto& [name, t] : net.params()) {
    binio::write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_u32(os, static_cast<uint32_t>(t.shape().size()));
    for (int64_t d : t.shape()) binio::write_u32(os, static_cast<uint32_t>(d));
    for (double v : t.data()) binio::write_f64(os, v);
  }
  if (!os) throw FormatError("DPCK: write failure on " + path);
}

Network load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("DPCK: cannot open " + path);
  binio::expect_magic(is, kDpckMagic, "DPCK");
  const uint32_t version = binio::read_u32(is, "DPCK version");
  if (version != kDpckVersion)
    throw FormatError("DPCK: unsupported version " + std::to_string(version));
  const uint32_t text_len = binio::read_u32(is, "DPCK spec length");
  std::string text(text_len, '\0');
  if (!is.read(text.data(), text_len)) throw FormatError("truncated while reading DPCK spec");
  NetworkSpec spec;
  try {
    spec = NetworkSpec::parse(text);
  } catch (const SpecError& e) {
    throw FormatError(std::string("DPCK: embedded spec invalid: ") + e.what());
  }
  Network net(spec, 0);
  const uint32_t count = binio::read_u32(is, "DPCK blob count");
  if (count != net.params().size())
    throw FormatError("DPCK: blob count " + std::to_string(count) + " does not match spec (" +
                      std::to_string(net.params().size()) + " parameters)");
  for (auto& [name, t] : net.params()) {
    const uint32_t name_len = binio::read_u32(is, "DPCK blob name length");
    std::string blob_name(name_len, '\0');
    if (!is.read(blob_name.data(), name_len))
      throw FormatError("truncated while reading DPCK blob name");
    if (blob_name != name)
      throw FormatError("DPCK: blob '" + blob_name + "' where '" + name + "' expected");
    const uint32_t rank = binio::read_u32(is, "DPCK blob rank");
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i)
      shape[i] = binio::read_u32(is, "DPCK blob extents");
    if (shape != t.shape())
      throw FormatError("DPCK: blob '" + name + "' shape " + shape_str(shape) +
                        " does not match spec shape " + shape_str(t.shape()));
    auto dst = t.raw_data();
    for (auto& v : dst) v = binio::read_f64(is, "DPCK blob data");
  }
  binio::expect_eof(is, "DPCK");
  return net;
}

}  // namespace distsearch
