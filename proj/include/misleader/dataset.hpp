#pragma once

#include <string>
#include <utility>
#include <vector>

#include "misleader/core.hpp"

namespace misleader {

/// A labeled example collection. Inputs are either flat features (n x d) or
/// images (n x c x h x w, values in [0,1]); labels are class indices.
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  bool image_mode() const { return inputs.shape.size() == 4; }
  std::size_t feature_dim() const { return inputs.row_size(); }

  /// Throws unless sizes line up, labels are in range, and image pixels
  /// (image mode only) lie in [0,1].
  void validate() const;

  /// Batch of the given example indices, paired labels preserved.
  std::pair<Tensor, std::vector<int>> gather(const std::vector<std::size_t>& idx) const;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

/// IDX (big-endian) image + label pair, pixels scaled by 1/255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Inverse of load_idx; pixel bytes round(x*255) clamped to [0,255].
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

/// Gaussian blobs with class means on a circle of radius
/// class_separation / (2 sin(pi/num_classes)) in the first two dimensions,
/// zero elsewhere; pairwise mean distance >= class_separation.
Dataset gen_gaussian_mixture(std::uint64_t seed, std::size_t n, int num_classes,
                             std::size_t dim, double class_separation,
                             double noise_std);

/// Two interleaved unit half-circles in 2D, labels 0/1, balanced within 1.
Dataset gen_two_moons(std::uint64_t seed, std::size_t n, double noise_std);

/// Disjoint, exhaustive partition; shuffle driven only by spec.seed;
/// train size = floor(train_fraction * n).
std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec);

}  // namespace misleader
