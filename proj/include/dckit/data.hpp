#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dckit/tensor.hpp"

namespace dckit::data {

// In-memory dataset: images flat [n, C, H, W], dense labels in [0, classes).
struct DatasetContainer {
  std::string name;
  int64_t height = 0, width = 0, channels = 0, classes = 0;
  std::vector<double> train_images;
  std::vector<int> train_labels;
  std::vector<double> test_images;
  std::vector<int> test_labels;
  std::vector<std::vector<int64_t>> train_index;  // per-class train indices
  std::string source;
  bool unit_range = false;  // pixels normalized to [0,1]

  int64_t img_elems() const { return channels * height * width; }
  int64_t n_train() const { return static_cast<int64_t>(train_labels.size()); }
  int64_t n_test() const { return static_cast<int64_t>(test_labels.size()); }

  void rebuild_index();
  void validate() const;

  Tensor train_batch(const std::vector<int64_t>& idx) const;
  Tensor test_batch(const std::vector<int64_t>& idx) const;
  std::vector<int> train_label_batch(const std::vector<int64_t>& idx) const;
  Tensor all_test() const;
};

// MNIST-style idx directory: train-images-idx3-ubyte / train-labels-idx1-ubyte
// (+ t10k-* when present). Pixels scaled to [0,1].
DatasetContainer load_idx(const std::string& dir);

// Raw f32 dataset: JSON manifest naming little-endian float32 image buffers
// and int32 label buffers.
DatasetContainer load_rawf32(const std::string& manifest_path);

// Two-class task where a strong shared low-frequency pattern dominates a weak
// class-signed patch, under unit pixel noise. 16x16 single channel.
DatasetContainer make_finegrained2(uint64_t seed, int variant = 0, int64_t train_per_class = 1000,
                                   int64_t test_per_class = 256);

DatasetContainer subset_by_class(const DatasetContainer& ds, const std::vector<int>& keep,
                                 bool relabel);

// Shift labels into a global class range (continual-learning task sequences).
DatasetContainer shift_labels(const DatasetContainer& ds, int offset, int64_t total_classes);

// Optional per-channel standardization over the train split (applied to both splits).
void standardize(DatasetContainer& ds);

}  // namespace dckit::data
