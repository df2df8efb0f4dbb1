#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "advlab/numerics.hpp"

using namespace advlab;

namespace {

// Reference xoshiro256** written straight from the published algorithm.
struct RefXoshiro {
  std::uint64_t s[4];
  explicit RefXoshiro(std::uint64_t seed) {
    for (auto& v : s) {
      seed += 0x9E3779B97F4A7C15ULL;
      std::uint64_t z = seed;
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
      v = z ^ (z >> 31);
    }
  }
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t next() {
    const std::uint64_t r = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return r;
  }
};

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (std::size_t i = 0; i < a.dim(0); ++i)
    for (std::size_t j = 0; j < b.dim(1); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dim(1); ++k) s += a.at(i, k) * b.at(k, j);
      out.at(i, j) = s;
    }
  return out;
}

double rel_err(const Tensor& a, const Tensor& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), Error);
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.row_size(), 3u);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(static_cast<void>(t.reshaped({4, 2})), Error);
}

TEST(Tensor, StorageIsOverAligned) {
  for (std::size_t n : {1u, 3u, 17u, 1000u}) {
    Tensor t({n});
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.ptr()) % 16, 0u);
  }
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const auto m = Tensor::matrix({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), m), m);
}

TEST(Matmul, HandComputedProduct) {
  EXPECT_EQ(matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5, 6}, {7, 8}})),
            Tensor::matrix({{19, 22}, {43, 50}}));
}

TEST(Matmul, ShapeMismatchThrowsShapeError) {
  try {
    matmul(Tensor({2, 3}), Tensor({2, 3}));
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Matmul, AgreesWithTripleLoop) {
  Rng rng(5);
  const Tensor a = rand_normal(rng, 7 * 13).reshaped({7, 13});
  const Tensor b = rand_normal(rng, 13 * 5).reshaped({13, 5});
  EXPECT_LT(rel_err(matmul(a, b), naive_matmul(a, b)), 1e-14);
}

TEST(Matmul, AssociativeOnRandomChains) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = rand_normal(rng, 6 * 8).reshaped({6, 8});
    const Tensor b = rand_normal(rng, 8 * 4).reshaped({8, 4});
    const Tensor c = rand_normal(rng, 4 * 9).reshaped({4, 9});
    EXPECT_LT(rel_err(matmul(matmul(a, b), c), matmul(a, matmul(b, c))), 1e-9);
  }
}

TEST(Argmax, UniqueMaximum) { EXPECT_EQ(argmax(Tensor::vector({0.1, 0.7, 0.2})), 1u); }

TEST(Argmax, TieGoesToLowestIndex) { EXPECT_EQ(argmax(Tensor::vector({0.5, 0.5})), 0u); }

TEST(Argmax, EmptyInputThrows) { EXPECT_THROW(argmax(std::span<const double>{}), Error); }

TEST(Rng, SplitmixKnownAnswer) {
  std::uint64_t state = 0;
  EXPECT_EQ(splitmix64(state), 0xE220A8397B1DCDAFULL);
}

TEST(Rng, MatchesReferenceXoshiro) {
  for (std::uint64_t seed : {0ULL, 1ULL, 42ULL, 0xFFFFFFFFFFFFFFFFULL}) {
    Rng rng(seed);
    RefXoshiro ref(seed);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(rng.next_u64(), ref.next());
  }
}

TEST(Rng, UniformInUnitInterval) {
  Rng rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, DerivedSeedsAreStableAndDistinct) {
  EXPECT_EQ(derive_seed(1, "net"), derive_seed(1, "net"));
  EXPECT_NE(derive_seed(1, "net"), derive_seed(1, "shuffle"));
  EXPECT_NE(derive_seed(1, "net"), derive_seed(2, "net"));
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
}

TEST(RandUniformInts, SingleValueRange) {
  Rng rng(17);
  EXPECT_EQ(rand_uniform_ints(rng, 0, 1, 5), (std::vector<std::int64_t>{0, 0, 0, 0, 0}));
}

TEST(RandUniformInts, SameSeedSameSequence) {
  Rng a(8), b(8);
  EXPECT_EQ(rand_uniform_ints(a, -5, 300, 500), rand_uniform_ints(b, -5, 300, 500));
}

TEST(RandUniformInts, EmptyRangeThrows) {
  Rng rng(1);
  EXPECT_THROW(rand_uniform_ints(rng, 3, 3, 1), Error);
}

TEST(RandUniformInts, MeanAndFrequenciesMatchReferenceSampler) {
  Rng rng(2024);
  const auto v = rand_uniform_ints(rng, 0, 24, 10000);
  std::vector<double> ours(24, 0.0), ref(24, 0.0);
  double mean = 0.0;
  for (auto x : v) {
    ASSERT_GE(x, 0);
    ASSERT_LT(x, 24);
    mean += static_cast<double>(x);
    ours[static_cast<std::size_t>(x)] += 1.0;
  }
  mean /= 10000.0;
  EXPECT_NEAR(mean, 11.5, 1.0);

  std::mt19937_64 gen(2024);
  std::uniform_int_distribution<int> dist(0, 23);
  for (int i = 0; i < 10000; ++i) ref[static_cast<std::size_t>(dist(gen))] += 1.0;
  // Both histograms stay within 5 standard deviations of the expected count.
  const double expected = 10000.0 / 24.0;
  const double sd = std::sqrt(10000.0 * (1.0 / 24.0) * (23.0 / 24.0));
  for (std::size_t k = 0; k < 24; ++k) {
    EXPECT_NEAR(ours[k], expected, 5 * sd);
    EXPECT_NEAR(ref[k], expected, 5 * sd);
  }
}

TEST(RandNormal, SameSeedSameTensor) {
  Rng a(4), b(4);
  EXPECT_EQ(rand_normal(a, 101), rand_normal(b, 101));
}

TEST(RandNormal, FirstTwoMoments) {
  Rng rng(77);
  const Tensor x = rand_normal(rng, 100000);
  double mean = 0.0, var = 0.0;
  for (double v : x.data()) mean += v;
  mean /= 1e5;
  for (double v : x.data()) var += (v - mean) * (v - mean);
  var /= 1e5;
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(RandNormal, ZeroCountThrows) {
  Rng rng(1);
  EXPECT_THROW(rand_normal(rng, 0), Error);
}

TEST(Permutation, IsAPermutationAndDeterministic) {
  Rng a(12), b(12);
  auto p = permutation(a, 257);
  EXPECT_EQ(p, permutation(b, 257));
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(p[i], i);
}
