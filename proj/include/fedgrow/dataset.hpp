#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fedgrow/tensor.hpp"

namespace fedgrow {

/// Labelled samples; samples has shape (n, h, w, c).
struct Dataset {
  Tensor samples;
  std::vector<int> labels;
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Reads an IDX image file (gzipped or raw) as (n, rows, cols, 1) floats in [0, 1].
Tensor load_idx_images(const std::filesystem::path& path);
/// Reads an IDX label file (gzipped or raw).
std::vector<int> load_idx_labels(const std::filesystem::path& path);

/// Loads the four MNIST-style files from a directory. Each file may carry a
/// ".gz" suffix. Throws FormatError on bad magic numbers, truncation, or
/// image/label count mismatches.
TrainTest load_idx_dataset(const std::filesystem::path& dir);

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t height = 28;
  std::size_t width = 28;
  std::size_t channels = 1;
  std::size_t per_class = 100;
  std::size_t test_per_class = 20;
  /// Distance between any two class means, in units of the noise stddev.
  double separation = 6.0;
  std::uint64_t seed = 0;
  bool operator==(const SyntheticSpec&) const = default;
};

/// Gaussian class blobs: means on mutually orthogonal random directions with
/// pairwise distance `separation`, unit isotropic noise.
TrainTest make_synthetic(const SyntheticSpec& spec);

}  // namespace fedgrow
