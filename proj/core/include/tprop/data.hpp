#pragma once

#include "tprop/linalg.hpp"

#include <string>
#include <vector>

namespace tprop {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Matrix inputs;            // N x d
  std::vector<int> labels;  // N entries, each < num_classes
  int num_classes = 0;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
  Dataset head(Index n) const;
  void validate() const;
};

struct Split {
  Dataset train;
  Dataset validation;
  Dataset test;
};

/// Parse big-endian IDX image/label files (gzip accepted transparently).
/// Pixels are scaled by 1/255; images flattened row-major.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Serialize back to IDX container bytes (pixels re-quantized by *255).
void save_idx(const Dataset& ds, int rows, int cols, const std::string& images_path,
              const std::string& labels_path);

/// CIFAR-10/100 binary records; variant selects 10 (1 label byte) or 100
/// (coarse+fine label bytes, fine kept).
Dataset load_cifar(const std::vector<std::string>& paths, int variant);
void save_cifar(const Dataset& ds, int variant, const std::string& path);

/// Deterministic disjoint train/validation partition; test left empty.
Split split_train_val(const Dataset& dataset, Index val_size, RngStream& rng);

/// Isotropic unit-variance Gaussian clusters with means `separation` apart.
Dataset synthetic_blobs(int classes, int per_class, int dim, double separation,
                        std::uint64_t seed);

}  // namespace tprop
