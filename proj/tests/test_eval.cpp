#include <fstream>

#include <gtest/gtest.h>

#include "advlab/eval.hpp"
#include "support.hpp"

using namespace advlab;
using namespace advlab::test;

namespace {

RobustnessCurve sample_curve(std::size_t points) {
  RobustnessCurve c;
  for (std::size_t i = 0; i < points; ++i) {
    c.epsilons.push_back(0.02 * static_cast<double>(i));
    c.accuracy.push_back(1.0 / (1.0 + static_cast<double>(i)));
    c.mean_confidence.push_back(0.9 - 0.01 * static_cast<double>(i) / 3.0);
  }
  c.n_samples = 1234;
  c.model_id = "extractor=mlp;head=fc_softmax_ce";
  c.dataset_id = "mnist-test";
  c.seed = "7";
  return c;
}

}  // namespace

TEST(Accuracy, PerfectPredictions) {
  const Tensor p = Tensor::matrix({{0.9, 0.1}, {0.2, 0.8}});
  const std::vector<std::size_t> labels{0, 1};
  EXPECT_EQ(accuracy(p, labels), 1.0);
}

TEST(Accuracy, ArgmaxRule) {
  const std::vector<std::size_t> labels{1};
  EXPECT_EQ(accuracy(Tensor::matrix({{0.6, 0.4}}), labels), 0.0);
}

TEST(Accuracy, RandomPredictionsNearChance) {
  Rng rng(1);
  const Tensor p = random_like(rng, {10000, 10}, 0, 1);
  std::vector<std::size_t> labels(10000);
  for (auto& l : labels) l = rng.below(10);
  EXPECT_NEAR(accuracy(p, labels), 0.1, 0.02);
}

TEST(Accuracy, ShapeMismatchThrows) {
  const std::vector<std::size_t> labels{0, 1, 0};
  EXPECT_THROW(accuracy(Tensor({2, 2}), labels), Error);
}

TEST(MeanConfidence, Definitional) {
  EXPECT_DOUBLE_EQ(mean_confidence(Tensor::matrix({{0.7, 0.3}})), 0.7);
  EXPECT_EQ(mean_confidence(Tensor::matrix({{0, 1, 0}, {1, 0, 0}})), 1.0);
  EXPECT_NEAR(mean_confidence(Tensor({5, 4}, 0.25)), 0.25, 1e-15);
  EXPECT_THROW(mean_confidence(Tensor({0, 3})), Error);
}

TEST(MeanConfidence, SoftmaxRowsAtLeastUniform) {
  Rng rng(2);
  Tensor p({200, 6});
  for (std::size_t b = 0; b < 200; ++b) {
    const Tensor l = random_like(rng, {6}, -4, 4);
    const double lse = log_sum_exp(l.data());
    for (std::size_t i = 0; i < 6; ++i) p.at(b, i) = std::exp(l[i] - lse);
  }
  EXPECT_GE(mean_confidence(p), 1.0 / 6);
}

TEST(Regime, Quadrants) {
  EXPECT_EQ(classify_regime(0.9, 0.9), Regime::robust);
  EXPECT_EQ(classify_regime(0.9, 0.1), Regime::reliable);
  EXPECT_EQ(classify_regime(0.1, 0.1), Regime::unreliable);
  EXPECT_EQ(classify_regime(0.1, 0.9), Regime::misleading);
}

TEST(Regime, TotalAndConsistentOnGrid) {
  const RegimeThresholds t{0.6, 0.4};
  for (int a = 0; a <= 100; ++a)
    for (int c = 0; c <= 100; ++c) {
      const double acc = a / 100.0, conf = c / 100.0;
      const Regime r = classify_regime(acc, conf, t);
      EXPECT_EQ(r == Regime::robust || r == Regime::reliable, acc >= 0.6);
      EXPECT_EQ(r == Regime::robust || r == Regime::misleading, conf >= 0.4);
    }
  EXPECT_THROW(classify_regime(0.5, 0.5, {1.0, 0.5}), Error);
}

TEST(InterIntraRatio, HandComputedSquares) {
  const auto ds = toy_dataset({{0, 0}, {0, 0.1}, {1, 0}, {1, 0.1}}, {0, 0, 1, 1}, 2);
  // scaled by 10 to fit in [0, 1]: the ratio is scale-free
  const auto r = inter_intra_ratio(ds, 1000, 1);
  EXPECT_EQ(r.intra_pairs, 2u);
  EXPECT_EQ(r.inter_pairs, 4u);
  EXPECT_NEAR(r.d_intra, 0.1, 1e-15);
  EXPECT_NEAR(r.d_inter, (2 * 1.0 + 2 * std::sqrt(1.01)) / 4, 1e-15);
  EXPECT_NEAR(r.ratio, 10.0249, 1e-4);
}

TEST(InterIntraRatio, IdenticalClassesGiveAboutOne) {
  Rng rng(3);
  std::vector<std::vector<double>> xs;
  std::vector<std::size_t> ys;
  for (std::size_t i = 0; i < 400; ++i) {
    xs.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    ys.push_back(i % 2);
  }
  EXPECT_NEAR(inter_intra_ratio(toy_dataset(xs, ys, 2), 5000, 4).ratio, 1.0, 0.05);
}

TEST(InterIntraRatio, SampledEstimateCloseToExhaustive) {
  BandSpec spec;
  spec.per_class_train = 20;
  spec.height = spec.width = 4;
  const auto bands = gen_band_classes(spec).train;
  const auto all = inter_intra_ratio(bands, 1000000, 1);
  const auto sampled = inter_intra_ratio(bands, 20000, 1);
  EXPECT_EQ(all.inter_pairs + all.intra_pairs, 220u * 219 / 2);
  EXPECT_NEAR(sampled.ratio, all.ratio, 0.05 * all.ratio);
  EXPECT_EQ(sampled.intra_pairs, 20000u);
}

TEST(InterIntraRatio, DegenerateInputsRejected) {
  const auto one_class = toy_dataset({{0, 0}, {0, 1}}, {0, 0}, 1);
  EXPECT_THROW(inter_intra_ratio(one_class, 10, 1), Error);
  const auto singleton = toy_dataset({{0, 0}, {0, 1}, {1, 1}}, {0, 0, 1}, 2);
  EXPECT_THROW(inter_intra_ratio(singleton, 10, 1), Error);
  const auto duplicates = toy_dataset({{0, 0}, {0, 0}, {1, 1}, {1, 1}}, {0, 0, 1, 1}, 2);
  EXPECT_THROW(inter_intra_ratio(duplicates, 10, 1), Error);
}

TEST(InterIntraRatio, BandsFartherApartThanMnist) {
  ADVLAB_REQUIRE_MNIST();
  BandSpec spec;
  spec.per_class_train = 200;
  const auto bands = gen_band_classes(spec).train;
  const auto mnist = head_subset(load_mnist_dir(mnist_dir()).train, 5000);
  EXPECT_GT(inter_intra_ratio(bands, 20000, 1).ratio, inter_intra_ratio(mnist, 20000, 1).ratio);
}

TEST(CurveCsv, RoundTripAndRowCount) {
  const std::string dir = scratch_dir("curve");
  const RobustnessCurve c = sample_curve(16);
  write_curve_csv(c, dir + "/c.csv", {"variant: x"});
  EXPECT_EQ(read_curve_csv(dir + "/c.csv"), c);

  std::ifstream is(dir + "/c.csv");
  std::string line;
  std::size_t rows = 0;
  bool header = false;
  double last = -1;
  while (std::getline(is, line)) {
    if (line.starts_with("#")) continue;
    if (!header) {
      EXPECT_EQ(line, "epsilon,accuracy,mean_confidence");
      header = true;
      continue;
    }
    const double eps = std::stod(line.substr(0, line.find(',')));
    EXPECT_GT(eps, last);
    last = eps;
    ++rows;
  }
  EXPECT_EQ(rows, 16u);
}

TEST(CurveCsv, RejectsMalformedFiles) {
  const std::string dir = scratch_dir("badcurve");
  std::ofstream(dir + "/a.csv") << "eps,acc\n0,1\n";
  std::ofstream(dir + "/b.csv") << "epsilon,accuracy,mean_confidence\n0,1\n";
  std::ofstream(dir + "/c.csv") << "epsilon,accuracy,mean_confidence\n0.1,1,1\n0,1,1\n";
  EXPECT_THROW(read_curve_csv(dir + "/a.csv"), Error);
  EXPECT_THROW(read_curve_csv(dir + "/b.csv"), Error);
  EXPECT_THROW(read_curve_csv(dir + "/c.csv"), Error);
  EXPECT_THROW(read_curve_csv(dir + "/missing.csv"), Error);
}

TEST(Curves, AveragePointwise) {
  RobustnessCurve a = sample_curve(3), b = sample_curve(3);
  b.seed = "8";
  for (double& v : b.accuracy) v = 0.0;
  const auto m = average_curves({a, b}, "mean");
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(m.accuracy[i], a.accuracy[i] / 2);
  EXPECT_EQ(m.seed, "7+8");
  EXPECT_THROW(average_curves({a, sample_curve(4)}, "x"), Error);
}

TEST(Curves, FindEpsilon) {
  const auto c = sample_curve(16);
  EXPECT_EQ(c.at_epsilon(0.1), 5u);
  EXPECT_EQ(c.find(0.11), c.size());
  EXPECT_THROW(c.at_epsilon(0.11), Error);
}

TEST(Curves, SvgMentionsEveryLabel) {
  const std::string svg = curves_svg({sample_curve(5), sample_curve(5)}, {"alpha", "beta"}, "t");
  EXPECT_TRUE(svg.starts_with("<svg") || svg.starts_with("<?xml"));
  EXPECT_NE(svg.find("alpha"), std::string::npos);
  EXPECT_NE(svg.find("beta"), std::string::npos);
}
