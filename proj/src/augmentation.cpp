#include "misleader/augmentation.hpp"

#include <cmath>

namespace misleader {

namespace {

constexpr double kDegToRad = M_PI / 180.0;

void check_prob(double p, const char* who) {
  if (p < 0.0 || p > 1.0) throw InvalidArgument(std::string(who) + " must be in [0,1]");
}

// bilinear lookup with zero outside the image
double sample_bilinear(const double* plane, std::size_t h, std::size_t w, double y,
                       double x) {
  const long y0 = static_cast<long>(std::floor(y));
  const long x0 = static_cast<long>(std::floor(x));
  const double fy = y - double(y0), fx = x - double(x0);
  auto at = [&](long yy, long xx) -> double {
    if (yy < 0 || yy >= long(h) || xx < 0 || xx >= long(w)) return 0.0;
    return plane[yy * long(w) + xx];
  };
  return at(y0, x0) * (1 - fy) * (1 - fx) + at(y0, x0 + 1) * (1 - fy) * fx +
         at(y0 + 1, x0) * fy * (1 - fx) + at(y0 + 1, x0 + 1) * fy * fx;
}

}  // namespace

void AugmentationPolicy::validate() const {
  check_prob(flip_prob, "flip_prob");
  check_prob(grayscale_prob, "grayscale_prob");
  check_prob(axis_flip_prob, "axis_flip_prob");
  if (crop_scale_lo > crop_scale_hi || crop_scale_lo <= 0.0 || crop_scale_hi > 1.0)
    throw InvalidArgument("crop scale range must satisfy 0 < lo <= hi <= 1");
  if (vec_scale_lo > vec_scale_hi) throw InvalidArgument("vector scale range is reversed");
  for (double v : {rotate_deg, translate_frac, jitter_strength, vec_rotate_deg,
                   vec_noise_std, vec_scale_lo, vec_scale_hi})
    if (!std::isfinite(v)) throw InvalidArgument("augmentation magnitude is not finite");
  if (vec_noise_std < 0.0) throw InvalidArgument("vector noise_std must be >= 0");
}

AugmentationPolicy AugmentationPolicy::image_default() {
  AugmentationPolicy p;
  p.mode = Mode::image;
  return p;
}

AugmentationPolicy AugmentationPolicy::vector_default() {
  AugmentationPolicy p;
  p.mode = Mode::vector;
  return p;
}

Tensor augment_image(const Tensor& x, const AugmentationPolicy& policy, Rng& rng) {
  if (policy.mode == AugmentationPolicy::Mode::identity) return x;
  if (policy.mode != AugmentationPolicy::Mode::image)
    throw InvalidArgument("augment_image: policy is not in image mode");
  if (x.shape.size() != 3) throw ShapeMismatch("augment_image: expects c x h x w");
  policy.validate();

  const std::size_t c = x.shape[0], h = x.shape[1], w = x.shape[2];
  Tensor cur = x;

  // random resized crop: crop side fraction s, bilinear resize back
  {
    const double s = rng.uniform(policy.crop_scale_lo, policy.crop_scale_hi);
    const std::size_t ch = std::max<std::size_t>(1, std::size_t(std::lround(s * double(h))));
    const std::size_t cw = std::max<std::size_t>(1, std::size_t(std::lround(s * double(w))));
    const std::size_t top = rng.uniform_index(h - ch + 1);
    const std::size_t left = rng.uniform_index(w - cw + 1);
    if (ch != h || cw != w) {
      Tensor out({c, h, w});
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double* plane = &cur.data[ci * h * w];
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double sy = double(top) + (h > 1 ? double(i) * double(ch - 1) / double(h - 1) : 0.0);
            const double sx = double(left) + (w > 1 ? double(j) * double(cw - 1) / double(w - 1) : 0.0);
            out.data[(ci * h + i) * w + j] = sample_bilinear(plane, h, w, sy, sx);
          }
      }
      cur = std::move(out);
    }
  }

  if (rng.bernoulli(policy.flip_prob)) {
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t i = 0; i < h; ++i) {
        double* row = &cur.data[(ci * h + i) * w];
        for (std::size_t j = 0; j < w / 2; ++j) std::swap(row[j], row[w - 1 - j]);
      }
  }

  // affine: rotation about the center plus translation, inverse-mapped
  {
    const double angle = rng.uniform(-policy.rotate_deg, policy.rotate_deg) * kDegToRad;
    const double ty = rng.uniform(-policy.translate_frac, policy.translate_frac) * double(h);
    const double tx = rng.uniform(-policy.translate_frac, policy.translate_frac) * double(w);
    if (angle != 0.0 || ty != 0.0 || tx != 0.0) {
      const double cy = (double(h) - 1.0) / 2.0, cx = (double(w) - 1.0) / 2.0;
      const double ca = std::cos(angle), sa = std::sin(angle);
      Tensor out({c, h, w});
      for (std::size_t ci = 0; ci < c; ++ci) {
        const double* plane = &cur.data[ci * h * w];
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j) {
            const double dy = double(i) - cy - ty, dx = double(j) - cx - tx;
            const double sy = cy + ca * dy + sa * dx;
            const double sx = cx - sa * dy + ca * dx;
            out.data[(ci * h + i) * w + j] = sample_bilinear(plane, h, w, sy, sx);
          }
      }
      cur = std::move(out);
    }
  }

  // brightness / contrast / saturation, each a uniform factor in [1-j, 1+j]
  {
    const double j = policy.jitter_strength;
    const double fb = rng.uniform(1.0 - j, 1.0 + j);
    const double fc = rng.uniform(1.0 - j, 1.0 + j);
    const double fs = rng.uniform(1.0 - j, 1.0 + j);
    if (fb != 1.0)
      for (double& v : cur.data) v *= fb;
    if (fc != 1.0) {
      double mean = 0.0;
      for (double v : cur.data) mean += v;
      mean /= double(cur.size());
      for (double& v : cur.data) v = mean + fc * (v - mean);
    }
    if (fs != 1.0 && c > 1) {
      const std::size_t hw = h * w;
      for (std::size_t s = 0; s < hw; ++s) {
        double gray = 0.0;
        for (std::size_t ci = 0; ci < c; ++ci) gray += cur.data[ci * hw + s];
        gray /= double(c);
        for (std::size_t ci = 0; ci < c; ++ci) {
          double& v = cur.data[ci * hw + s];
          v = gray + fs * (v - gray);
        }
      }
    }
  }

  if (rng.bernoulli(policy.grayscale_prob) && c > 1) {
    const std::size_t hw = h * w;
    for (std::size_t s = 0; s < hw; ++s) {
      double gray = 0.0;
      for (std::size_t ci = 0; ci < c; ++ci) gray += cur.data[ci * hw + s];
      gray /= double(c);
      for (std::size_t ci = 0; ci < c; ++ci) cur.data[ci * hw + s] = gray;
    }
  }

  for (double& v : cur.data) v = std::clamp(v, 0.0, 1.0);
  return cur;
}

Tensor augment_vector(const Tensor& x, const AugmentationPolicy& policy, Rng& rng,
                      const std::vector<double>& noise_std_per_dim) {
  if (policy.mode == AugmentationPolicy::Mode::identity) return x;
  if (policy.mode != AugmentationPolicy::Mode::vector)
    throw InvalidArgument("augment_vector: policy is not in vector mode");
  if (x.shape.size() != 1 || x.size() == 0)
    throw ShapeMismatch("augment_vector: expects a non-empty vector");
  policy.validate();
  if (!noise_std_per_dim.empty() && noise_std_per_dim.size() != x.size())
    throw ShapeMismatch("augment_vector: noise scale length mismatch");

  Tensor out = x;
  if (out.size() >= 2) {
    const double angle = rng.uniform(-policy.vec_rotate_deg, policy.vec_rotate_deg) * kDegToRad;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double x0 = out.data[0], x1 = out.data[1];
    out.data[0] = ca * x0 - sa * x1;
    out.data[1] = sa * x0 + ca * x1;
  }
  for (double& v : out.data)
    if (rng.bernoulli(policy.axis_flip_prob)) v = -v;
  const double scale = rng.uniform(policy.vec_scale_lo, policy.vec_scale_hi);
  for (double& v : out.data) v *= scale;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double std_i =
        noise_std_per_dim.empty() ? policy.vec_noise_std : noise_std_per_dim[i];
    out.data[i] += rng.normal(0.0, std_i);
  }
  return out;
}

Dataset augment_dataset(const Dataset& dataset, const AugmentationPolicy& policy,
                        std::uint64_t seed, std::size_t copies) {
  if (dataset.size() == 0) throw InvalidArgument("augment_dataset: empty dataset");
  if (copies == 0) throw InvalidArgument("augment_dataset: copies must be >= 1");
  policy.validate();

  // resolve relative vector noise against the per-dimension data std
  std::vector<double> noise_std_per_dim;
  if (policy.mode == AugmentationPolicy::Mode::vector && policy.noise_relative_to_data_std) {
    const std::size_t d = dataset.feature_dim();
    noise_std_per_dim.assign(d, 0.0);
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < dataset.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) mean[j] += dataset.inputs.row(i)[j];
    for (double& m : mean) m /= double(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = dataset.inputs.row(i)[j] - mean[j];
        noise_std_per_dim[j] += diff * diff;
      }
    for (double& v : noise_std_per_dim)
      v = policy.vec_noise_std * std::sqrt(v / double(dataset.size()));
  }

  const bool image = dataset.image_mode();
  std::vector<std::size_t> shape = dataset.inputs.shape;
  shape[0] = dataset.size() * copies;
  Dataset out;
  out.inputs = Tensor(shape);
  out.labels.resize(shape[0]);
  out.num_classes = dataset.num_classes;
  out.name = dataset.name + "/augmented";

  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Tensor src = dataset.inputs.slice_row(i);
    for (std::size_t cpy = 0; cpy < copies; ++cpy) {
      Rng rng(derive_seed(seed, i, cpy));
      const Tensor t = image ? augment_image(src, policy, rng)
                             : augment_vector(src, policy, rng, noise_std_per_dim);
      const std::size_t row = i * copies + cpy;
      std::copy(t.data.begin(), t.data.end(), out.inputs.row(row));
      out.labels[row] = dataset.labels[i];
    }
  }
  return out;
}

}  // namespace misleader
