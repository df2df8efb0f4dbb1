#include <gtest/gtest.h>

#include "advlab/layers.hpp"
#include "support.hpp"

using namespace advlab;
using namespace advlab::test;

namespace {

// Checks input and parameter gradients of <layer output, r> against central differences.
void expect_layer_gradients(Layer& layer, Tensor x, Rng& rng) {
  const Tensor r = random_like(rng, layer.forward(x).shape());
  const Tensor gx = layer.backward(r);
  auto objective = [&] { return dot(layer.forward(x), r); };
  EXPECT_LT(grad_error(gx.data(), central_diff(objective, x.data())), 1e-4) << "input";
  for (auto& p : layer.params()) {
    const Tensor g = *p.grad;
    EXPECT_LT(grad_error(g.data(), central_diff(objective, p.value->data())), 1e-4) << p.name;
  }
}

// 3x3 "same" convolution, NHWC, weights [out, kh, kw, in].
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& bias) {
  const std::size_t n = x.dim(0), h = x.dim(1), wd = x.dim(2), ci = x.dim(3), co = w.dim(0);
  Tensor y({n, h, wd, co});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < wd; ++j)
        for (std::size_t o = 0; o < co; ++o) {
          double s = bias[o];
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
              if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(wd))
                continue;
              for (std::size_t c = 0; c < ci; ++c)
                s += x[((b * h + ii) * wd + jj) * ci + c] *
                     w[((o * 3 + (di + 1)) * 3 + (dj + 1)) * ci + c];
            }
          y[((b * h + i) * wd + j) * co + o] = s;
        }
  return y;
}

}  // namespace

TEST(Dense, IdentityWeightsZeroBias) {
  Dense d(2, 2);
  d.weight() = Tensor::matrix({{1, 0}, {0, 1}});
  EXPECT_EQ(d.forward(Tensor::matrix({{1, 2}})), Tensor::matrix({{1, 2}}));
}

TEST(Dense, HandEvaluatedAffineMap) {
  Dense d(2, 2);
  d.weight() = Tensor::matrix({{2, 0}, {0, 3}});
  d.bias() = Tensor::vector({1, 1});
  EXPECT_EQ(d.forward(Tensor::matrix({{1, 1}})), Tensor::matrix({{3, 4}}));
}

TEST(Dense, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    Dense d(5, 3);
    d.weight() = random_like(rng, {3, 5});
    d.bias() = random_like(rng, {3});
    expect_layer_gradients(d, random_like(rng, {4, 5}), rng);
  }
}

TEST(Dense, WrongInputWidthThrows) {
  Dense d(3, 2);
  EXPECT_THROW(d.forward(Tensor({1, 4})), Error);
}

TEST(Dense, BackwardBeforeForwardIsAStateError) {
  Dense d(3, 2);
  try {
    d.backward(Tensor({1, 2}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::state);
  }
}

TEST(Relu, SplitsOnSign) {
  Relu r;
  EXPECT_EQ(r.forward(Tensor::matrix({{-1, 2}})), Tensor::matrix({{0, 2}}));
  EXPECT_EQ(r.backward(Tensor::matrix({{5, 7}})), Tensor::matrix({{0, 7}}));
}

TEST(Relu, GradientsMatchFiniteDifferencesAwayFromKink) {
  Rng rng(2);
  for (int t = 0; t < 20; ++t) {
    Tensor x = random_like(rng, {3, 6});
    for (double& v : x.data())
      if (std::abs(v) < 1e-3) v = 0.5;
    Relu r;
    expect_layer_gradients(r, x, rng);
  }
}

TEST(Conv2d, ZeroKernelGivesZeroOutput) {
  Conv2d c(5, 5, 2, 3);
  Rng rng(3);
  const Tensor y = c.forward(random_like(rng, {2, 5, 5, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(4);
  Conv2d c(6, 5, 2, 3);
  c.weight() = random_like(rng, c.weight().shape());
  c.bias() = random_like(rng, {3});
  const Tensor x = random_like(rng, {2, 6, 5, 2});
  const Tensor y = c.forward(x);
  const Tensor ref = naive_conv(x, c.weight(), c.bias());
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    Conv2d c(4, 4, 2, 3);
    c.weight() = random_like(rng, c.weight().shape());
    c.bias() = random_like(rng, {3});
    expect_layer_gradients(c, random_like(rng, {2, 4, 4, 2}), rng);
  }
}

TEST(MaxPool2d, PicksWindowMaximum) {
  MaxPool2d p(2, 4, 1);
  const Tensor x({1, 2, 4, 1}, std::vector<double>{1, 5, 2, 2, 3, 4, 0, 1});
  EXPECT_EQ(p.forward(x), Tensor({1, 1, 2, 1}, std::vector<double>{5, 2}));
}

TEST(MaxPool2d, TiesRouteGradientToFirstCellInScanOrder) {
  MaxPool2d p(2, 2, 1);
  p.forward(Tensor({1, 2, 2, 1}, std::vector<double>{3, 3, 3, 3}));
  EXPECT_EQ(p.backward(Tensor({1, 1, 1, 1}, std::vector<double>{1})),
            Tensor({1, 2, 2, 1}, std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool2d, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    MaxPool2d p(4, 4, 2);
    // distinct values keep every window maximum strict
    Tensor x({2, 4, 4, 2});
    const auto perm = permutation(rng, x.size());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * static_cast<double>(perm[i]);
    expect_layer_gradients(p, x, rng);
  }
}

TEST(MaxPool2d, OddSizeRejected) { EXPECT_THROW(MaxPool2d(3, 4, 1), Error); }

TEST(Flatten, RoundTripsShape) {
  Flatten f;
  const Tensor x({2, 3, 2, 1}, 1.0);
  EXPECT_EQ(f.forward(x).shape(), (Shape{2, 6}));
  EXPECT_EQ(f.backward(Tensor({2, 6}, 2.0)).shape(), x.shape());
}

TEST(Layers, CloneIsIndependent) {
  Dense d(2, 2);
  d.weight() = Tensor::matrix({{1, 2}, {3, 4}});
  auto copy = d.clone();
  d.weight()[0] = 10;
  EXPECT_EQ(static_cast<Dense&>(*copy).weight()[0], 1.0);
}
