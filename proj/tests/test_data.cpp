#include <fstream>

#include <gtest/gtest.h>

#include "advlab/data.hpp"
#include "advlab/illusive.hpp"
#include "support.hpp"

using namespace advlab;
using namespace advlab::test;

namespace {

// Minimal IDX reader written against the published format, independent of load_mnist.
struct RefIdx {
  std::uint32_t magic = 0, count = 0, rows = 0, cols = 0;
  std::vector<unsigned char> payload;
};

RefIdx read_idx(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::vector<unsigned char> b{std::istreambuf_iterator<char>(is), {}};
  auto word = [&](std::size_t at) {
    return static_cast<std::uint32_t>(b[at]) << 24 | static_cast<std::uint32_t>(b[at + 1]) << 16 |
           static_cast<std::uint32_t>(b[at + 2]) << 8 | b[at + 3];
  };
  RefIdx r;
  r.magic = word(0);
  r.count = word(4);
  const std::size_t header = (r.magic & 0xFF) == 3 ? 16 : 8;
  if (header == 16) {
    r.rows = word(8);
    r.cols = word(12);
  }
  r.payload.assign(b.begin() + static_cast<std::ptrdiff_t>(header), b.end());
  return r;
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

LabeledDataset counting_dataset(std::size_t n, std::size_t classes) {
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back({static_cast<double>(i) / static_cast<double>(n), 0.5});
    ys.push_back(i % classes);
  }
  return toy_dataset(xs, ys, classes);
}

}  // namespace

TEST(LabeledDataset, ConstructorChecksInvariants) {
  EXPECT_THROW(LabeledDataset(Tensor({2, 1, 1, 1}), {0}, 2, "x"), Error);
  EXPECT_THROW(LabeledDataset(Tensor({1, 1, 1, 1}), {2}, 2, "x"), Error);
  EXPECT_THROW(LabeledDataset(Tensor({1, 1, 1, 1}, 1.5), {0}, 2, "x"), Error);
  EXPECT_THROW(LabeledDataset(Tensor({1, 1}), {0}, 2, "x"), Error);
}

TEST(LabeledDataset, SaveLoadRoundTrip) {
  const std::string dir = scratch_dir("dataset");
  const auto ds = counting_dataset(30, 3);
  ds.save(dir + "/ds.bin", "kind=test", 4);
  EXPECT_EQ(LabeledDataset::load(dir + "/ds.bin"), ds);
}

TEST(Mnist, MatchesReferenceParser) {
  ADVLAB_REQUIRE_MNIST();
  const auto splits = load_mnist_dir(mnist_dir());
  const auto& train = splits.train;
  EXPECT_EQ(train.size(), 60000u);
  EXPECT_EQ(train.height(), 28u);
  EXPECT_EQ(train.width(), 28u);
  EXPECT_EQ(train.label(0), 5u);
  EXPECT_EQ(splits.test.size(), 10000u);

  const auto img = read_idx(mnist_dir() + "/train-images-idx3-ubyte");
  const auto lab = read_idx(mnist_dir() + "/train-labels-idx1-ubyte");
  EXPECT_EQ(img.magic, 0x803u);
  EXPECT_EQ(img.count, 60000u);
  EXPECT_EQ(img.rows, 28u);
  EXPECT_EQ(img.cols, 28u);
  EXPECT_EQ(lab.payload[0], 5);
  for (std::size_t i : {0u, 1u, 777u, 59999u}) {
    EXPECT_EQ(train.label(i), lab.payload[i]);
    for (std::size_t a = 0; a < 784; ++a)
      ASSERT_EQ(train.sample(i)[a], img.payload[i * 784 + a] / 255.0);
  }
  EXPECT_EQ(train.class_counts()[1], 6742u);
}

TEST(Mnist, WrongMagicNamesObservedValue) {
  const std::string dir = scratch_dir("badmagic");
  write_bytes(dir + "/img", {0, 0, 8, 4, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7});
  write_bytes(dir + "/lab", {0, 0, 8, 1, 0, 0, 0, 1, 0});
  try {
    load_mnist(dir + "/img", dir + "/lab");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::format);
    EXPECT_NE(std::string(e.what()).find("0x00000804"), std::string::npos) << e.what();
  }
}

TEST(Mnist, TruncatedAndMissingFiles) {
  const std::string dir = scratch_dir("truncated");
  write_bytes(dir + "/img", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2});
  write_bytes(dir + "/lab", {0, 0, 8, 1, 0, 0, 0, 2, 0, 1});
  EXPECT_THROW(load_mnist(dir + "/img", dir + "/lab"), Error);
  try {
    load_mnist(dir + "/nope", dir + "/lab");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::io);
  }
}

TEST(Bands, ZeroOverlapRanges) {
  BandSpec spec;
  spec.per_class_train = 20;
  spec.per_class_test = 5;
  const auto b = gen_band_classes(spec);
  EXPECT_EQ(b.train.size(), 220u);
  EXPECT_EQ(b.test.size(), 55u);
  for (std::size_t i = 0; i < b.train.size(); ++i) {
    const std::size_t c = b.train.label(i);
    for (double v : b.train.sample(i)) {
      const double raw = v * 255.0;
      ASSERT_NEAR(raw, std::round(raw), 1e-9);
      if (c == 0) {
        ASSERT_GE(raw, 0.0);
        ASSERT_LT(raw, 24.0);
      }
      if (c == 10) {
        ASSERT_GE(raw, 240.0);
        ASSERT_LE(raw, 255.0);
      }
      ASSERT_GE(raw, 24.0 * c - 1e-9);
      ASSERT_LT(raw, 24.0 * (c + 1));
    }
  }
}

TEST(Bands, ClassMeansIncreaseAndMeanRuleSeparates) {
  BandSpec spec;
  spec.per_class_train = 30;
  const auto b = gen_band_classes(spec);
  std::vector<double> mean(11, 0.0);
  std::vector<double> count(11, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b.train.size(); ++i) {
    double m = 0;
    for (double v : b.train.sample(i)) m += v;
    m = m * 255.0 / static_cast<double>(b.train.sample_size());
    mean[b.train.label(i)] += m;
    count[b.train.label(i)] += 1;
    // threshold rule on the per-image mean: band index = floor(mean / 24)
    if (std::min<std::size_t>(10, static_cast<std::size_t>(m / 24.0)) == b.train.label(i)) ++correct;
  }
  for (std::size_t c = 1; c < 11; ++c) EXPECT_GT(mean[c] / count[c], mean[c - 1] / count[c - 1]);
  EXPECT_EQ(correct, b.train.size());
}

TEST(Bands, OverlapWidensAndClips) {
  BandSpec spec;
  spec.overlap = 16;
  EXPECT_EQ(spec.range(0), (std::pair<std::int64_t, std::int64_t>{0, 40}));
  EXPECT_EQ(spec.range(5), (std::pair<std::int64_t, std::int64_t>{104, 160}));
  EXPECT_EQ(spec.range(10), (std::pair<std::int64_t, std::int64_t>{224, 256}));
}

TEST(Bands, DeterministicAndTrainTestDiffer) {
  BandSpec spec;
  spec.per_class_train = 5;
  spec.per_class_test = 5;
  const auto a = gen_band_classes(spec), b = gen_band_classes(spec);
  EXPECT_EQ(a.train, b.train);
  EXPECT_NE(a.train.images(), a.test.images());
  spec.seed = 2;
  EXPECT_NE(gen_band_classes(spec).train.images(), a.train.images());
}

TEST(Bands, InvalidSpecsRejected) {
  BandSpec spec;
  spec.n_classes = 1;
  EXPECT_THROW(gen_band_classes(spec), Error);
  spec.n_classes = 12;  // class 11 starts at 264 > 255
  EXPECT_THROW(gen_band_classes(spec), Error);
}

TEST(SubsetByLabels, RelabelsInGivenOrder) {
  const auto ds = counting_dataset(40, 4);
  const std::size_t keep[] = {2, 0};
  const auto s = subset_by_labels(ds, keep);
  EXPECT_EQ(s.n_classes(), 2u);
  EXPECT_EQ(s.size(), 20u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t original = static_cast<std::size_t>(std::lround(s.sample(i)[0] * 40)) % 4;
    EXPECT_EQ(s.label(i), original == 2 ? 0u : 1u);
  }
}

TEST(SubsetByLabels, AllLabelsIsIdentityUpToName) {
  const auto ds = counting_dataset(25, 5);
  const std::size_t keep[] = {0, 1, 2, 3, 4};
  const auto s = subset_by_labels(ds, keep);
  EXPECT_EQ(s.images(), ds.images());
  EXPECT_EQ(s.labels(), ds.labels());
}

TEST(SubsetByLabels, UnknownOrDuplicateLabelRejected) {
  const auto ds = counting_dataset(20, 10);
  const std::size_t eleven[] = {11};
  const std::size_t dup[] = {1, 1};
  EXPECT_THROW(subset_by_labels(ds, eleven), Error);
  EXPECT_THROW(subset_by_labels(ds, dup), Error);
}

TEST(SubsetByLabels, MnistZeroOne) {
  ADVLAB_REQUIRE_MNIST();
  const auto train = load_mnist_dir(mnist_dir()).train;
  const std::size_t keep[] = {0, 1};
  const auto s = subset_by_labels(train, keep);
  const auto counts = train.class_counts();
  EXPECT_EQ(s.size(), counts[0] + counts[1]);
  EXPECT_EQ(s.class_counts(), (std::vector<std::size_t>{counts[0], counts[1]}));
}

TEST(BalancedSubsample, QuotaPerClass) {
  const auto ds = counting_dataset(4000, 4);
  const auto s = balanced_subsample(ds, 1000, 3);
  EXPECT_EQ(s.class_counts(), (std::vector<std::size_t>(4, 250)));
}

TEST(BalancedSubsample, ExactTotalSpreadsRemainder) {
  const auto ds = counting_dataset(9000, 3);
  const auto floor_mode = balanced_subsample(ds, 1000, 3);
  const auto exact = balanced_subsample(ds, 1000, 3, true);
  EXPECT_EQ(floor_mode.size(), 999u);
  EXPECT_EQ(exact.size(), 1000u);
  EXPECT_EQ(exact.class_counts(), (std::vector<std::size_t>{334, 333, 333}));
}

TEST(BalancedSubsample, DeterministicWithoutReplacement) {
  const auto ds = counting_dataset(600, 3);
  const auto a = balanced_subsample(ds, 300, 9), b = balanced_subsample(ds, 300, 9);
  EXPECT_EQ(a, b);
  std::set<double> seen;
  for (std::size_t i = 0; i < a.size(); ++i) seen.insert(a.sample(i)[0]);
  EXPECT_EQ(seen.size(), a.size());
  EXPECT_NE(balanced_subsample(ds, 300, 10).images(), a.images());
}

TEST(BalancedSubsample, InsufficientClassRejected) {
  const auto ds = counting_dataset(30, 3);
  EXPECT_THROW(balanced_subsample(ds, 60, 1), Error);
  EXPECT_THROW(balanced_subsample(ds, 2, 1), Error);
}

TEST(BalancedSubsample, MnistConstantModeSize) {
  ADVLAB_REQUIRE_MNIST();
  const auto train = load_mnist_dir(mnist_dir()).train;
  for (std::size_t k = 2; k <= 10; ++k) {
    std::vector<std::size_t> keep(k);
    std::iota(keep.begin(), keep.end(), 0);
    const auto s = balanced_subsample(subset_by_labels(train, keep), 10000, k, true);
    EXPECT_EQ(s.size(), 10000u) << k;
  }
  EXPECT_EQ(balanced_subsample(train, 10000, 1).class_counts(), std::vector<std::size_t>(10, 1000));
}

TEST(RemoveIndices, EmptySetIsIdentity) {
  const auto ds = counting_dataset(12, 3);
  EXPECT_EQ(remove_indices(ds, {}), ds);
}

TEST(RemoveIndices, ComplementPlusRemovedIsWhole) {
  const auto ds = counting_dataset(50, 5);
  const std::set<std::size_t> drop{0, 7, 8, 49};
  const auto rest = remove_indices(ds, drop);
  EXPECT_EQ(rest.size(), 46u);
  std::multiset<std::pair<double, std::size_t>> all, merged;
  for (std::size_t i = 0; i < ds.size(); ++i) all.insert({ds.sample(i)[0], ds.label(i)});
  for (std::size_t i = 0; i < rest.size(); ++i) merged.insert({rest.sample(i)[0], rest.label(i)});
  for (std::size_t i : drop) merged.insert({ds.sample(i)[0], ds.label(i)});
  EXPECT_EQ(all, merged);
  EXPECT_THROW(remove_indices(ds, {50}), Error);
}

TEST(RemoveRandom, CardinalityAndDeterminism) {
  const auto ds = counting_dataset(100, 4);
  EXPECT_EQ(remove_random(ds, 17, 3).size(), 83u);
  EXPECT_EQ(remove_random(ds, 17, 3), remove_random(ds, 17, 3));
  EXPECT_EQ(random_indices(100, 17, 3).size(), 17u);
  EXPECT_THROW(remove_random(ds, 101, 3), Error);
}

TEST(HeadSubset, TakesLeadingSamples) {
  const auto ds = counting_dataset(10, 2);
  EXPECT_EQ(head_subset(ds, 4).size(), 4u);
  EXPECT_EQ(head_subset(ds, 0), ds);
  EXPECT_EQ(head_subset(ds, 99), ds);
}

TEST(SelectIllusive, SingleRunGivesItsMisclassifiedSet) {
  Rng rng(21);
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < 120; ++i) {
    xs.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    ys.push_back(rng.below(3));
  }
  const auto ds = toy_dataset(xs, ys, 3);
  NetworkSpec shallow;
  shallow.height = 1;
  shallow.width = 3;
  shallow.hidden = {4};
  const auto one = select_illusive(ds, 1, shallow, 2, 77, 32);

  shallow.seed = derive_seed(77, 0);
  shallow.n_classes = 3;
  Network net(shallow);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.seed = derive_seed(77, 1);
  train(net, ds, cfg);
  const Tensor probs = predict(net, ds);
  std::set<std::size_t> wrong;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (argmax(probs.row(i)) != ds.label(i)) wrong.insert(i);
  EXPECT_EQ(one.indices, wrong);
  EXPECT_FALSE(wrong.empty());
}

TEST(SelectIllusive, IntersectionOfRunsAndExcludesAnyCorrect) {
  Rng rng(22);
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < 90; ++i) {
    xs.push_back({rng.uniform(), rng.uniform()});
    ys.push_back(rng.below(3));
  }
  const auto ds = toy_dataset(xs, ys, 3);
  NetworkSpec shallow;
  shallow.height = 1;
  shallow.width = 2;
  shallow.hidden = {3};
  const auto three = select_illusive(ds, 3, shallow, 1, 5, 16);
  EXPECT_EQ(three.n_runs, 3u);
  for (std::size_t i = 0; i < ds.size(); ++i)
    EXPECT_EQ(three.indices.contains(i), three.correct_runs[i] == 0);
  // run r depends only on (base seed, r), so a 2-run selection is a superset
  const auto two = select_illusive(ds, 2, shallow, 1, 5, 16);
  for (std::size_t i : three.indices) EXPECT_TRUE(two.indices.contains(i));
  EXPECT_THROW(select_illusive(ds, 0, shallow, 1, 5), Error);
}
