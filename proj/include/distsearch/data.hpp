#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "distsearch/tensor.hpp"

namespace distsearch {

// Immutable after construction. Images are (n, C, H, W) float64 in [0,1].
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int num_classes = 0;

  int64_t size() const { return images.defined() ? images.dim(0) : 0; }
  Shape sample_shape() const;  // (C, H, W)
  void validate() const;       // throws ContractError on any invariant break
};

struct Batch {
  Tensor images;  // (b, C, H, W), plain leaf without grad
  std::vector<int> labels;
};

// Lightweight index view over a shared dataset.
class DatasetView {
 public:
  DatasetView() = default;
  DatasetView(std::shared_ptr<const Dataset> source, std::vector<int64_t> indices);

  int64_t size() const { return static_cast<int64_t>(indices_.size()); }
  const std::vector<int64_t>& indices() const { return indices_; }
  const Dataset& source() const;

  // positions index into this view, not the source
  Batch gather(const std::vector<int64_t>& positions) const;
  Batch all() const;

 private:
  std::shared_ptr<const Dataset> source_;
  std::vector<int64_t> indices_;
};

struct DatasetSplit {
  std::shared_ptr<const Dataset> source;
  std::vector<int64_t> train_indices;
  std::vector<int64_t> val_indices;
  uint64_t seed = 0;
  double ratio = 0.0;

  DatasetView train() const { return DatasetView(source, train_indices); }
  DatasetView val() const { return DatasetView(source, val_indices); }
};

// Seeded permutation split; |train| = round(ratio * n), remainder validates.
DatasetSplit split(std::shared_ptr<const Dataset> d, double ratio, uint64_t seed);

// Single-channel oriented-grating classification task. Each class has a fixed
// sinusoidal template; Gaussian pixel noise of the given sigma is added and
// the result clamped to [0,1]. Labels are balanced within one sample.
Dataset synth_task(int64_t n, int num_classes, double noise_sigma, uint64_t seed,
                   int64_t h = 16, int64_t w = 16);

// The noise-free template image for one class (1, 1, h, w); the construction
// oracle for nearest-template classification tests.
Tensor synth_template(int cls, int num_classes, int64_t h, int64_t w);

void save_dataset(const Dataset& d, const std::string& path);
Dataset load_dataset(const std::string& path);

// Rows of "label,pixel,pixel,..." with row-major C*H*W pixels in [0,1].
// num_classes 0 means infer as max label + 1.
Dataset import_csv(const std::string& path, int64_t c, int64_t h, int64_t w,
                   int num_classes = 0);

// Round-robin minibatches with a deterministic per-epoch reshuffle.
class BatchStream {
 public:
  BatchStream(DatasetView view, int64_t batch_size, uint64_t seed);

  Batch next();
  int64_t batches_per_epoch() const;
  int64_t batch_size() const { return batch_size_; }

 private:
  void reshuffle();

  DatasetView view_;
  int64_t batch_size_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
  uint64_t seed_;
  uint64_t epoch_ = 0;
};

}  // namespace distsearch
