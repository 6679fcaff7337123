#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "safetynet/network.hpp"

namespace safetynet {

/// Labeled examples with every feature in [0,1].
struct Dataset {
  std::vector<Vector> features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const { return features.size(); }
  bool empty() const { return features.empty(); }
  std::size_t width() const { return features.empty() ? 0 : features.front().size(); }

  /// Throws Consistency if any invariant is broken.
  void validate() const;

  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// MNIST-style IDX pair (images magic 0x00000803, labels 0x00000801).
/// Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Rows of "label,feature,...". Values outside [0,1] are clipped; the number
/// of clipped cells is written to `clipped` when given.
Dataset load_csv(const std::filesystem::path& path, std::size_t* clipped = nullptr);
void save_csv(const Dataset& ds, const std::filesystem::path& path);

/// K Gaussian clusters centred on a circle of radius 0.35 around (0.5, 0.5).
Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, double spread, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::size_t> train_idx, val_idx, test_idx;
};

Split split(const Dataset& ds, double train_frac, double val_frac, double test_frac, std::uint64_t seed);

}  // namespace safetynet
