#include "distsearch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "distsearch/binio.hpp"
#include "distsearch/errors.hpp"
#include "distsearch/rng.hpp"

namespace distsearch {

Shape Dataset::sample_shape() const {
  return {images.dim(1), images.dim(2), images.dim(3)};
}

void Dataset::validate() const {
  if (!images.defined() || images.shape().size() != 4)
    throw ContractError("dataset: images must be a (n,C,H,W) tensor");
  const int64_t n = images.dim(0);
  if (n <= 0) throw ContractError("dataset: empty");
  if (static_cast<int64_t>(labels.size()) != n)
    throw ContractError("dataset: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " images");
  if (num_classes < 1) throw ContractError("dataset: num_classes must be >= 1");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ContractError("dataset: label " + std::to_string(labels[i]) +
                          " out of range at sample " + std::to_string(i));
  for (double v : images.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw ContractError("dataset: pixel value " + std::to_string(v) + " outside [0,1]");
}

DatasetView::DatasetView(std::shared_ptr<const Dataset> source, std::vector<int64_t> indices)
    : source_(std::move(source)), indices_(std::move(indices)) {
  if (!source_) throw ContractError("dataset view: null source");
  const int64_t n = source_->size();
  for (int64_t i : indices_)
    if (i < 0 || i >= n)
      throw ContractError("dataset view: index " + std::to_string(i) + " out of range");
}

const Dataset& DatasetView::source() const {
  if (!source_) throw ContractError("dataset view: empty view has no source");
  return *source_;
}

Batch DatasetView::gather(const std::vector<int64_t>& positions) const {
  if (!source_) throw ContractError("dataset view: gather on empty view");
  if (positions.empty()) throw ContractError("dataset view: empty batch requested");
  const Shape ss = source_->sample_shape();
  const int64_t stride = shape_numel(ss);
  const auto src = source_->images.data();
  std::vector<double> pixels(static_cast<size_t>(stride) * positions.size());
  Batch batch;
  batch.labels.reserve(positions.size());
  for (size_t p = 0; p < positions.size(); ++p) {
    if (positions[p] < 0 || positions[p] >= size())
      throw ContractError("dataset view: batch position out of range");
    const int64_t si = indices_[positions[p]];
    std::copy_n(src.begin() + si * stride, stride, pixels.begin() + p * stride);
    batch.labels.push_back(source_->labels[si]);
  }
  batch.images = Tensor::from_vector(
      {static_cast<int64_t>(positions.size()), ss[0], ss[1], ss[2]}, std::move(pixels));
  return batch;
}

Batch DatasetView::all() const {
  std::vector<int64_t> positions(indices_.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int64_t>(i);
  return gather(positions);
}

DatasetSplit split(std::shared_ptr<const Dataset> d, double ratio, uint64_t seed) {
  if (!d) throw ContractError("split: null dataset");
  d->validate();
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ConfigError("split: ratio must lie strictly between 0 and 1, got " +
                      std::to_string(ratio));
  const int64_t n = d->size();
  std::vector<int64_t> perm(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  const auto ntrain = static_cast<int64_t>(std::llround(ratio * static_cast<double>(n)));
  DatasetSplit s;
  s.source = std::move(d);
  s.train_indices.assign(perm.begin(), perm.begin() + ntrain);
  s.val_indices.assign(perm.begin() + ntrain, perm.end());
  s.seed = seed;
  s.ratio = ratio;
  return s;
}

Tensor synth_template(int cls, int num_classes, int64_t h, int64_t w) {
  if (num_classes < 1) throw ContractError("synth_template: num_classes must be >= 1");
  if (cls < 0 || cls >= num_classes) throw ContractError("synth_template: class out of range");
  const double pi = 3.14159265358979323846;
  const double phi = pi * static_cast<double>(cls) / static_cast<double>(num_classes);
  const double phase = 2.0 * pi * static_cast<double>(cls) / static_cast<double>(num_classes);
  const double freq = 2.0;
  const double scale = static_cast<double>(std::max(h, w));
  std::vector<double> v(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) * std::cos(phi) +
                        static_cast<double>(y) * std::sin(phi)) /
                       scale;
      v[y * w + x] = 0.5 + 0.35 * std::sin(2.0 * pi * freq * u + phase);
    }
  return Tensor::from_vector({1, 1, h, w}, std::move(v));
}

Dataset synth_task(int64_t n, int num_classes, double noise_sigma, uint64_t seed,
                   int64_t h, int64_t w) {
  if (n < 1 || num_classes < 1)
    throw ContractError("synth_task: n and num_classes must be >= 1");
  if (noise_sigma < 0.0) throw ContractError("synth_task: negative noise sigma");
  if (h < 1 || w < 1) throw ContractError("synth_task: image extents must be >= 1");

  std::vector<int> labels(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % num_classes);
  Rng rng(seed);
  rng.shuffle(labels);

  std::vector<Tensor> templates;
  templates.reserve(static_cast<size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) templates.push_back(synth_template(k, num_classes, h, w));

  std::vector<double> pixels(static_cast<size_t>(n * h * w));
  for (int64_t i = 0; i < n; ++i) {
    const auto t = templates[static_cast<size_t>(labels[i])].data();
    for (int64_t j = 0; j < h * w; ++j) {
      const double v = t[j] + noise_sigma * rng.normal();
      pixels[i * h * w + j] = std::clamp(v, 0.0, 1.0);
    }
  }

  Dataset d;
  d.images = Tensor::from_vector({n, 1, h, w}, std::move(pixels));
  d.labels = std::move(labels);
  d.num_classes = num_classes;
  return d;
}

namespace {
constexpr char kDpdsMagic[4] = {'D', 'P', 'D', 'S'};
constexpr uint32_t kDpdsVersion = 1;
}  // namespace

void save_dataset(const Dataset& d, const std::string& path) {
  d.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("DPDS: cannot open " + path + " for writing");
  binio::write_magic(os, kDpdsMagic);
  binio::write_u32(os, kDpdsVersion);
  binio::write_u32(os, static_cast<uint32_t>(d.size()));
  binio::write_u32(os, static_cast<uint32_t>(d.images.dim(1)));
  binio::write_u32(os, static_cast<uint32_t>(d.images.dim(2)));
  binio::write_u32(os, static_cast<uint32_t>(d.images.dim(3)));
  binio::write_u32(os, static_cast<uint32_t>(d.num_classes));
  for (double v : d.images.data()) binio::write_f64(os, v);
  for (int l : d.labels) binio::write_u32(os, static_cast<uint32_t>(l));
  if (!os) throw FormatError("DPDS: write failure on " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("DPDS: cannot open " + path);
  binio::expect_magic(is, kDpdsMagic, "DPDS");
  const uint32_t version = binio::read_u32(is, "DPDS version");
  if (version != kDpdsVersion)
    throw FormatError("DPDS: unsupported version " + std::to_string(version));
  const uint32_t n = binio::read_u32(is, "DPDS sample count");
  const uint32_t c = binio::read_u32(is, "DPDS channels");
  const uint32_t h = binio::read_u32(is, "DPDS height");
  const uint32_t w = binio::read_u32(is, "DPDS width");
  const uint32_t classes = binio::read_u32(is, "DPDS class count");
  if (n == 0 || c == 0 || h == 0 || w == 0 || classes == 0)
    throw FormatError("DPDS: zero extent in header");
  const uint64_t count = static_cast<uint64_t>(n) * c * h * w;
  std::vector<double> pixels(count);
  for (uint64_t i = 0; i < count; ++i) pixels[i] = binio::read_f64(is, "DPDS pixels");
  std::vector<int> labels(n);
  for (uint32_t i = 0; i < n; ++i)
    labels[i] = static_cast<int>(binio::read_u32(is, "DPDS labels"));
  binio::expect_eof(is, "DPDS");

  Dataset d;
  d.images = Tensor::from_vector({n, c, h, w}, std::move(pixels));
  d.labels = std::move(labels);
  d.num_classes = static_cast<int>(classes);
  try {
    d.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("DPDS: invalid payload: ") + e.what());
  }
  return d;
}

Dataset import_csv(const std::string& path, int64_t c, int64_t h, int64_t w, int num_classes) {
  if (c < 1 || h < 1 || w < 1) throw ContractError("import_csv: extents must be >= 1");
  std::ifstream is(path);
  if (!is) throw FormatError("csv import: cannot open " + path);
  const int64_t stride = c * h * w;
  std::vector<double> pixels;
  std::vector<int> labels;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    if (!std::getline(row, cell, ','))
      throw FormatError("csv import: line " + std::to_string(lineno) + ": missing label");
    try {
      labels.push_back(std::stoi(cell));
    } catch (const std::exception&) {
      throw FormatError("csv import: line " + std::to_string(lineno) + ": bad label '" + cell + "'");
    }
    int64_t got = 0;
    while (std::getline(row, cell, ',')) {
      double v;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw FormatError("csv import: line " + std::to_string(lineno) + ": bad pixel '" + cell + "'");
      }
      if (!(v >= 0.0 && v <= 1.0))
        throw FormatError("csv import: line " + std::to_string(lineno) + ": pixel " + cell +
                          " outside [0,1]");
      pixels.push_back(v);
      ++got;
    }
    if (got != stride)
      throw FormatError("csv import: line " + std::to_string(lineno) + ": expected " +
                        std::to_string(stride) + " pixels, got " + std::to_string(got));
  }
  if (labels.empty()) throw FormatError("csv import: no rows in " + path);

  Dataset d;
  d.images = Tensor::from_vector({static_cast<int64_t>(labels.size()), c, h, w}, std::move(pixels));
  d.labels = std::move(labels);
  if (num_classes == 0)
    for (int l : d.labels) num_classes = std::max(num_classes, l + 1);
  d.num_classes = num_classes;
  try {
    d.validate();
  } catch (const ContractError& e) {
    throw FormatError(std::string("csv import: invalid payload: ") + e.what());
  }
  return d;
}

BatchStream::BatchStream(DatasetView view, int64_t batch_size, uint64_t seed)
    : view_(std::move(view)), batch_size_(batch_size), seed_(seed) {
  if (batch_size_ < 1) throw ContractError("batch stream: batch size must be >= 1");
  if (view_.size() < 1) throw ContractError("batch stream: empty view");
  order_.resize(static_cast<size_t>(view_.size()));
  reshuffle();
}

void BatchStream::reshuffle() {
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int64_t>(i);
  Rng rng(seed_ ^ (0x9e3779b97f4a7c15ULL * (epoch_ + 1)));
  rng.shuffle(order_);
  cursor_ = 0;
}

int64_t BatchStream::batches_per_epoch() const {
  return (view_.size() + batch_size_ - 1) / batch_size_;
}

Batch BatchStream::next() {
  const int64_t remaining = view_.size() - cursor_;
  const int64_t take = std::min(batch_size_, remaining);
  std::vector<int64_t> positions(order_.begin() + cursor_, order_.begin() + cursor_ + take);
  cursor_ += take;
  if (cursor_ >= view_.size()) {
    ++epoch_;
    reshuffle();
  }
  return view_.gather(positions);
}

}  // namespace distsearch
