#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "great/tensor.hpp"

namespace great::data {

enum class Split : std::uint8_t { Train, Val, Test };

std::string to_string(Split split);

/// Samples with features in [0, 1], class labels, a labeled mask, and a
/// train/val/test tag per sample. Immutable after construction.
struct Dataset {
  Tensor features;  // [n, ...sample shape]
  std::vector<int> labels;
  std::vector<std::uint8_t> labeled;
  std::vector<Split> split;
  std::size_t class_count = 0;
  // Per-feature affine map from raw to stored values:
  //   stored = (raw - feature_offset) / feature_range.
  // Empty when the source was already in [0, 1].
  std::vector<double> feature_offset;
  std::vector<double> feature_range;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::vector<std::size_t> indices(Split which) const;
  /// Train samples whose labeled flag is set.
  std::vector<std::size_t> labeled_train() const;
  /// Throws ContractError if any invariant is broken.
  void validate() const;
};

/// Features and labels for a list of sample indices.
struct Subset {
  std::vector<std::size_t> index;
  Tensor x;
  std::vector<int> y;
};
Subset take(const Dataset& dataset, const std::vector<std::size_t>& index);
Subset take(const Dataset& dataset, Split which);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
};
/// Class-stratified random split; tags partition the index set.
void assign_splits(Dataset& dataset, std::uint64_t seed, const SplitRatios& ratios = {});

/// Two interleaving half circles, min-max scaled per axis. Class 0 is the
/// upper moon (cos t, sin t); class 1 the lower (1 - cos t, 0.5 - sin t).
Dataset make_two_moons(std::size_t n, double noise_sd, std::uint64_t seed);
/// Isotropic Gaussian clusters centred on the unit circle.
Dataset make_blobs(std::size_t n, std::size_t classes, double spread, std::uint64_t seed);

/// Keeps a class-stratified random `fraction` of train samples labeled; the
/// rest of the train split becomes unlabeled.
Dataset subsample_labels(const Dataset& dataset, double fraction, std::uint64_t seed);

/// Nearest-neighbor resize of [n, h, w, c] images.
Tensor resize_nearest(const Tensor& images, std::size_t height, std::size_t width);

struct LoadOptions {
  std::optional<std::size_t> height;
  std::optional<std::size_t> width;
  std::uint64_t split_seed = 0;
};

/// IDX ubyte image file (3 or 4 dims) with a matching IDX ubyte label file.
/// Pixels are scaled to [0, 1]; output shape is [n, h, w, c].
Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const LoadOptions& options = {});

struct CsvSchema {
  std::string label_column = "label";
  // Per-sample shape for the feature columns; empty means [feature count].
  Shape sample_shape;
};
/// Headered CSV; every non-label column is a feature, min-max scaled per
/// column to [0, 1].
Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {},
                 std::uint64_t split_seed = 0);

}  // namespace great::data
