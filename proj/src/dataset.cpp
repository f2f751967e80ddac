#include "misleader/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace misleader {

void Dataset::validate() const {
  if (inputs.rows() != labels.size())
    throw ShapeMismatch("dataset: inputs rows " + std::to_string(inputs.rows()) +
                        " != labels " + std::to_string(labels.size()));
  if (num_classes <= 0) throw InvalidArgument("dataset: num_classes must be positive");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw InvalidArgument("dataset: label " + std::to_string(y) + " out of range");
  if (image_mode()) {
    for (double v : inputs.data)
      if (!(v >= 0.0 && v <= 1.0))
        throw InvalidArgument("dataset: image pixel outside [0,1]");
  }
}

std::pair<Tensor, std::vector<int>> Dataset::gather(const std::vector<std::size_t>& idx) const {
  std::vector<std::size_t> shape = inputs.shape;
  shape[0] = idx.size();
  Tensor out(shape);
  std::vector<int> y(idx.size());
  const std::size_t rs = inputs.row_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const double* src = inputs.row(idx[i]);
    std::copy(src, src + rs, out.row(i));
    y[i] = labels[idx[i]];
  }
  return {std::move(out), std::move(y)};
}

// ---------------------------------------------------------------------------
// IDX format. Everything big-endian: u32 magic (2051 images / 2049 labels),
// u32 per dimension, then raw bytes row-major.
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

std::uint32_t read_be_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw TruncatedFile("idx: unexpected end of file in " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<char*>(b), 4);
}

std::vector<unsigned char> read_payload(std::ifstream& in, std::size_t count,
                                        const std::string& path) {
  std::vector<unsigned char> buf(count);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count)))
    throw TruncatedFile("idx: declared size exceeds bytes present in " + path);
  return buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw InvalidArgument("idx: cannot open " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw InvalidArgument("idx: cannot open " + labels_path);

  const std::uint32_t img_magic = read_be_u32(img, images_path);
  if (img_magic != kImageMagic)
    throw BadMagic("idx: image magic " + std::to_string(img_magic) + " != 2051");
  const std::uint32_t n_img = read_be_u32(img, images_path);
  const std::uint32_t h = read_be_u32(img, images_path);
  const std::uint32_t w = read_be_u32(img, images_path);

  const std::uint32_t lab_magic = read_be_u32(lab, labels_path);
  if (lab_magic != kLabelMagic)
    throw BadMagic("idx: label magic " + std::to_string(lab_magic) + " != 2049");
  const std::uint32_t n_lab = read_be_u32(lab, labels_path);

  if (n_img != n_lab)
    throw CountMismatch("idx: image count " + std::to_string(n_img) +
                        " != label count " + std::to_string(n_lab));

  const auto pixels = read_payload(img, std::size_t(n_img) * h * w, images_path);
  const auto labels = read_payload(lab, n_lab, labels_path);

  Dataset ds;
  ds.inputs = Tensor({n_img, 1, h, w});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    ds.inputs.data[i] = static_cast<double>(pixels[i]) / 255.0;
  ds.labels.assign(labels.begin(), labels.end());
  int max_label = 0;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.num_classes = max_label + 1;
  ds.name = images_path;
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  if (!ds.image_mode()) throw InvalidArgument("idx: dataset is not in image mode");
  if (ds.inputs.shape[1] != 1) throw Unsupported("idx: only single-channel images");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw InvalidArgument("idx: cannot write " + images_path);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw InvalidArgument("idx: cannot write " + labels_path);

  write_be_u32(img, kImageMagic);
  write_be_u32(img, static_cast<std::uint32_t>(ds.size()));
  write_be_u32(img, static_cast<std::uint32_t>(ds.inputs.shape[2]));
  write_be_u32(img, static_cast<std::uint32_t>(ds.inputs.shape[3]));
  std::vector<unsigned char> pixels(ds.inputs.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = std::lround(ds.inputs.data[i] * 255.0);
    pixels[i] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
  }
  img.write(reinterpret_cast<char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));

  write_be_u32(lab, kLabelMagic);
  write_be_u32(lab, static_cast<std::uint32_t>(ds.size()));
  std::vector<unsigned char> bytes(ds.labels.begin(), ds.labels.end());
  lab.write(reinterpret_cast<char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

Dataset gen_gaussian_mixture(std::uint64_t seed, std::size_t n, int num_classes,
                             std::size_t dim, double class_separation,
                             double noise_std) {
  if (n == 0 || dim == 0) throw InvalidArgument("gaussian_mixture: n and dim must be positive");
  if (noise_std <= 0.0) throw InvalidArgument("gaussian_mixture: noise_std must be > 0");
  if (num_classes <= 0) throw InvalidArgument("gaussian_mixture: num_classes must be positive");
  if (n < static_cast<std::size_t>(num_classes))
    throw InvalidArgument("gaussian_mixture: n < num_classes");
  if (dim < 2 && num_classes > 2)
    throw InvalidArgument("gaussian_mixture: need dim >= 2 for more than two classes");

  // means evenly spaced on a circle in the first two coordinates so that
  // adjacent means sit exactly class_separation apart
  const double radius =
      num_classes == 1 ? 0.0
                       : class_separation / (2.0 * std::sin(M_PI / num_classes));
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  for (int c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * M_PI * c / num_classes;
    means[c][0] = radius * std::cos(angle);
    if (dim >= 2) means[c][1] = radius * std::sin(angle);
  }

  Rng rng(seed);
  Dataset ds;
  ds.inputs = Tensor({n, dim});
  ds.labels.resize(n);
  ds.num_classes = num_classes;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "mixture(k=%d,dim=%zu,seed=%llu)", num_classes, dim,
                static_cast<unsigned long long>(seed));
  ds.name = buf;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % num_classes);  // round-robin keeps counts within 1
    ds.labels[i] = c;
    double* x = ds.inputs.row(i);
    for (std::size_t j = 0; j < dim; ++j) x[j] = means[c][j] + rng.normal(0.0, noise_std);
  }
  return ds;
}

Dataset gen_two_moons(std::uint64_t seed, std::size_t n, double noise_std) {
  if (n < 2) throw InvalidArgument("two_moons: n must be >= 2");
  if (noise_std < 0.0) throw InvalidArgument("two_moons: noise_std must be >= 0");

  const std::size_t n0 = (n + 1) / 2;
  const std::size_t n1 = n - n0;
  Rng rng(seed);
  Dataset ds;
  ds.inputs = Tensor({n, std::size_t(2)});
  ds.labels.resize(n);
  ds.num_classes = 2;
  ds.name = "two_moons(seed=" + std::to_string(seed) + ")";
  for (std::size_t i = 0; i < n; ++i) {
    double* x = ds.inputs.row(i);
    if (i < n0) {
      const double t = n0 > 1 ? M_PI * double(i) / double(n0 - 1) : 0.0;
      x[0] = std::cos(t);
      x[1] = std::sin(t);
      ds.labels[i] = 0;
    } else {
      const std::size_t j = i - n0;
      const double t = n1 > 1 ? M_PI * double(j) / double(n1 - 1) : 0.0;
      x[0] = 1.0 - std::cos(t);
      x[1] = 0.5 - std::sin(t);
      ds.labels[i] = 1;
    }
    if (noise_std > 0.0) {
      x[0] += rng.normal(0.0, noise_std);
      x[1] += rng.normal(0.0, noise_std);
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, const SplitSpec& spec) {
  if (dataset.size() == 0) throw InvalidArgument("split: dataset is empty");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw InvalidArgument("split: train_fraction must be in (0,1)");

  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(spec.seed);
  rng.shuffle(idx);

  const std::size_t n_train =
      static_cast<std::size_t>(spec.train_fraction * double(dataset.size()));
  std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + n_train);
  std::vector<std::size_t> test_idx(idx.begin() + n_train, idx.end());

  auto build = [&](const std::vector<std::size_t>& sel, const char* tag) {
    Dataset part;
    auto [x, y] = dataset.gather(sel);
    part.inputs = std::move(x);
    part.labels = std::move(y);
    part.num_classes = dataset.num_classes;
    part.name = dataset.name + tag;
    return part;
  };
  return {build(train_idx, "/train"), build(test_idx, "/test")};
}

}  // namespace misleader
