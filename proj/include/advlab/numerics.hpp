#pragma once

// Dense f64 tensors and the project-wide seeded generator.
//
// Tensors are row-major: the last index varies fastest. Every source of
// randomness in the library is an advlab::Rng (xoshiro256**, seeded through
// splitmix64), so a run is a pure function of its configuration and seed.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "advlab/error.hpp"

namespace advlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tensor {
 public:
  // Fixed over-alignment keeps Eigen's vectorised loop peeling, and therefore
  // every rounding, identical from run to run.
  using Storage = std::vector<double, Eigen::aligned_allocator<double>>;

  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
    check_shape();
  }

  Tensor(Shape shape, const std::vector<double>& data)
      : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}

  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    require(data_.size() == shape_size(shape_), ErrorKind::shape,
            "tensor data length " + std::to_string(data_.size()) +
                " does not match shape " + advlab::to_string(shape_));
  }

  static Tensor vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      require(row.size() == c, ErrorKind::shape, "ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* ptr() noexcept { return data_.data(); }
  const double* ptr() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  // Elements per leading-index slice.
  std::size_t row_size() const {
    return shape_.empty() ? 0 : data_.size() / shape_[0];
  }
  std::span<double> row(std::size_t i) {
    const std::size_t n = row_size();
    return {data_.data() + i * n, n};
  }
  std::span<const double> row(std::size_t i) const {
    const std::size_t n = row_size();
    return {data_.data() + i * n, n};
  }

  Tensor reshaped(Shape shape) const& {
    require(shape_size(shape) == size(), ErrorKind::shape,
            "cannot reshape " + advlab::to_string(shape_) + " to " +
                advlab::to_string(shape));
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    require(shape_size(shape) == size(), ErrorKind::shape,
            "cannot reshape " + advlab::to_string(shape_) + " to " +
                advlab::to_string(shape));
    return Tensor(std::move(shape), std::move(data_));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    for (std::size_t d : shape_)
      require(d > 0, ErrorKind::shape,
              "tensor dimensions must be positive, got " + advlab::to_string(shape_));
  }

  Shape shape_;
  Storage data_;
};

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline MatrixMap as_matrix(double* p, std::size_t rows, std::size_t cols) {
  return MatrixMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatrixMap as_matrix(const double* p, std::size_t rows, std::size_t cols) {
  return ConstMatrixMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0), ErrorKind::shape,
          "matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor out({a.dim(0), b.dim(1)});
  detail::as_matrix(out.ptr(), a.dim(0), b.dim(1)).noalias() =
      detail::as_matrix(a.ptr(), a.dim(0), a.dim(1)) *
      detail::as_matrix(b.ptr(), b.dim(0), b.dim(1));
  return out;
}

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), ErrorKind::range, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::size_t argmax(const Tensor& v) {
  require(v.rank() <= 1, ErrorKind::shape, "argmax expects a 1-d tensor");
  return argmax(v.data());
}

// ---------------------------------------------------------------------------
// Randomness

inline constexpr std::string_view kPrngId = "xoshiro256**/splitmix64";

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Child seed for an independent stream; stable across platforms.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t stream) {
  std::uint64_t s = parent ^ (stream * 0xD1B54A32D192ED03ULL);
  splitmix64(s);
  return splitmix64(s);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  return derive_seed(parent, hash_tag(tag));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : s_) s = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, range) by rejection.
  std::uint64_t below(std::uint64_t range) {
    require(range > 0, ErrorKind::range, "empty integer range");
    const std::uint64_t threshold = (0 - range) % range;
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x >= threshold) return x % range;
    }
  }

  Rng child(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }
  Rng child(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t s_[4];
};

inline std::vector<std::int64_t> rand_uniform_ints(Rng& rng, std::int64_t lo, std::int64_t hi,
                                                   std::size_t n) {
  require(lo < hi, ErrorKind::range,
          "empty integer range [" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
  const auto range = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo);
  std::vector<std::int64_t> out(n);
  for (auto& v : out) v = lo + static_cast<std::int64_t>(rng.below(range));
  return out;
}

// Box-Muller, consuming two uniforms per pair of outputs.
inline Tensor rand_normal(Rng& rng, std::size_t n) {
  require(n >= 1, ErrorKind::range, "rand_normal needs n >= 1");
  Tensor out({n});
  for (std::size_t i = 0; i < n; i += 2) {
    const double u1 = 1.0 - rng.uniform();  // (0, 1]
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    out[i] = r * std::cos(theta);
    if (i + 1 < n) out[i + 1] = r * std::sin(theta);
  }
  return out;
}

// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace advlab
