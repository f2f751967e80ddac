#pragma once

#include "misleader/core.hpp"
#include "misleader/dataset.hpp"

namespace misleader {

/// Stochastic query-simulation transforms. Image pipelines mirror standard
/// distillation augmentation (resized crop, flip, affine, color jitter,
/// grayscale); vector mode is the low-dimensional analog (rotation, axis
/// flip, scale, additive noise). Magnitudes are config defaults, not fixed.
struct AugmentationPolicy {
  enum class Mode { image, vector, identity };
  Mode mode = Mode::identity;

  // image
  double crop_scale_lo = 0.6;
  double crop_scale_hi = 1.0;
  double flip_prob = 0.5;
  double rotate_deg = 15.0;
  double translate_frac = 0.1;
  double jitter_strength = 0.4;
  double grayscale_prob = 0.1;

  // vector
  double vec_rotate_deg = 20.0;
  double vec_noise_std = 0.1;   // interpreted per noise_relative_to_data_std
  bool noise_relative_to_data_std = true;
  double vec_scale_lo = 0.8;
  double vec_scale_hi = 1.2;
  double axis_flip_prob = 0.5;

  void validate() const;
  static AugmentationPolicy identity() { return AugmentationPolicy{}; }
  static AugmentationPolicy image_default();
  static AugmentationPolicy vector_default();
};

/// One stochastic transform of a c x h x w image, output clamped to [0,1].
/// Transform order: resized crop, flip, affine, jitter, grayscale.
Tensor augment_image(const Tensor& x, const AugmentationPolicy& policy, Rng& rng);

/// One stochastic transform of a d-vector: rotation in the first two
/// coordinates, per-axis sign flip, global scale, additive Gaussian noise.
/// noise_std_per_dim carries the resolved noise scale for each coordinate
/// (empty means policy.vec_noise_std for all).
Tensor augment_vector(const Tensor& x, const AugmentationPolicy& policy, Rng& rng,
                      const std::vector<double>& noise_std_per_dim = {});

/// n * copies examples, labels carried over (diagnostics only; the simulated
/// attacker never reads them). Each output example uses an rng stream derived
/// from (seed, source index, copy index), so the result is a pure function of
/// its arguments and augmentation may be parallelized per example.
Dataset augment_dataset(const Dataset& dataset, const AugmentationPolicy& policy,
                        std::uint64_t seed, std::size_t copies);

}  // namespace misleader
