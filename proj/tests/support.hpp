#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "advlab/data.hpp"

namespace advlab::test {

inline std::string mnist_dir() {
  const char* env = std::getenv("ADVLAB_MNIST_DIR");
  return env ? env : "data/mnist";
}

inline bool have_mnist() {
  return std::filesystem::exists(mnist_dir() + "/train-images-idx3-ubyte");
}

// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("advlab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

// Small labelled dataset of flat 1x1xd samples.
inline LabeledDataset toy_dataset(const std::vector<std::vector<double>>& xs,
                                  const std::vector<std::size_t>& labels, std::size_t classes) {
  const std::size_t d = xs.front().size();
  Tensor images({xs.size(), 1, d, 1});
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t a = 0; a < d; ++a) images.row(i)[a] = xs[i][a];
  return LabeledDataset(std::move(images), labels, classes, "toy");
}

}  // namespace advlab::test

#define ADVLAB_REQUIRE_MNIST()                                                     \
  do {                                                                             \
    if (!::advlab::test::have_mnist()) GTEST_SKIP() << "MNIST not found";          \
  } while (0)

namespace advlab::test {

// Central-difference gradient of f with respect to x (perturbed in place).
template <class F>
std::vector<double> central_diff(F&& f, std::span<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// Max-normalised relative error between two gradients.
inline double grad_error(std::span<const double> a, std::span<const double> b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double s = std::sqrt(std::max(na, nb));
  return s == 0 ? 0 : std::sqrt(d) / s;
}

inline Tensor random_like(Rng& rng, Shape shape, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace advlab::test
