#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace misleader {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidArgument : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct SizeMismatch : Error { using Error::Error; };
struct GraphError : Error { using Error::Error; };
struct BudgetExceeded : Error { using Error::Error; };
struct BoundViolation : Error { using Error::Error; };
struct TooLargeForExact : Error { using Error::Error; };
struct Unsupported : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };
struct CountMismatch : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct ChecksumMismatch : Error { using Error::Error; };
struct SchemaError : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Tensor: dense row-major array of doubles with a dynamic shape.
// First dimension is the batch dimension wherever batches appear.
// ---------------------------------------------------------------------------

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(numel(shape), 0.0);
  }
  Tensor(std::vector<std::size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape))
      throw ShapeMismatch("tensor data size does not match shape");
  }

  static std::size_t numel(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  // batch views: rows() x row_size() regardless of trailing rank
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t row_size() const { return rows() == 0 ? 0 : size() / rows(); }
  double* row(std::size_t i) { return data.data() + i * row_size(); }
  const double* row(std::size_t i) const { return data.data() + i * row_size(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  // single example i as a rank-(r-1) tensor
  Tensor slice_row(std::size_t i) const {
    std::vector<std::size_t> s(shape.begin() + 1, shape.end());
    if (s.empty()) s.push_back(1);
    Tensor t(std::move(s));
    const double* src = row(i);
    std::copy(src, src + row_size(), t.data.begin());
    return t;
  }
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

// ---------------------------------------------------------------------------
// Rng: mt19937_64 bit source with hand-rolled distributions.
// std::normal_distribution and friends are implementation-defined, which
// would break bit-exact reproducibility across toolchains.
// ---------------------------------------------------------------------------

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, uncached
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  bool bernoulli(double p) { return uniform() < p; }

  int sign() { return (next_u64() & 1u) ? 1 : -1; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i)
      std::swap(v[i - 1], v[uniform_index(i)]);
  }

 private:
  std::mt19937_64 gen_;
};

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Named sub-streams off one base seed. Labels keep independently evolving
// parts of a run (init, shuffles, augmentation, ...) from sharing state.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return mix64(base ^ mix64(h));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(base ^ mix64(a ^ mix64(b)));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label,
                                 std::uint64_t index) {
  return derive_seed(derive_seed(base, label), index);
}

}  // namespace misleader
