#pragma once

// Self-checks behind `advlab verify`: central finite differences against the
// analytic backward passes, FGSM bounds and the pattern-head summation bounds.

#include <functional>
#include <string>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/heads.hpp"
#include "advlab/layers.hpp"
#include "advlab/network.hpp"

namespace advlab {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdTolerance = 1e-4;

// ||a - n|| / max(||a||, ||n||), with 0 when both vanish.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  require(analytic.size() == numeric.size(), ErrorKind::shape, "gradient sizes differ");
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

// Central differences of `f` with respect to every entry of `x` (perturbed in place).
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x,
                                            double step = kFdStep) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f();
    x[i] = keep - step;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

struct CheckResult {
  std::string name;
  std::size_t instances = 0;
  std::size_t failures = 0;
  double worst = 0.0;  // largest error metric seen
  std::string detail = {};

  bool passed() const { return failures == 0 && instances > 0; }
  void record(double err, double tolerance, const std::string& where) {
    ++instances;
    worst = std::max(worst, err);
    if (!(err < tolerance)) {
      ++failures;
      if (detail.empty()) detail = where + ": error " + format_double(err);
    }
  }
};

namespace detail {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  const Tensor z = rand_normal(rng, t.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * z[i];
  return t;
}

// Random values kept at least `gap` away from zero (relu kinks).
inline Tensor off_kink_tensor(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (double& v : t.data())
    if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
  return t;
}

inline double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Checks a layer with the scalar objective sum(r * forward(x)).
inline void check_layer(CheckResult& res, Layer& layer, Tensor x, Rng& rng, const std::string& tag) {
  const Tensor y0 = layer.forward(x);
  const Tensor r = random_tensor(rng, y0.shape());
  const Tensor gx = layer.backward(r);
  std::vector<Tensor> grads;
  auto params = layer.params();
  for (const auto& p : params) grads.push_back(*p.grad);
  auto objective = [&] { return dot(layer.forward(x), r); };
  res.record(relative_error(gx.data(), numeric_gradient(objective, x.data())), kFdTolerance,
             tag + " input");
  for (std::size_t i = 0; i < params.size(); ++i)
    res.record(relative_error(grads[i].data(), numeric_gradient(objective, params[i].value->data())),
               kFdTolerance, tag + " " + params[i].name);
}

}  // namespace detail

inline NetworkSpec tiny_spec(ExtractorKind ext, HeadKind head, std::uint64_t seed) {
  NetworkSpec s;
  s.extractor = ext;
  s.height = 4;
  s.width = 4;
  s.channels = ext == ExtractorKind::cnn ? 2 : 1;
  s.conv_channels = {2, 3};
  s.hidden = ext == ExtractorKind::cnn ? std::vector<std::size_t>{4} : std::vector<std::size_t>{5, 4};
  s.head = head;
  s.n_classes = 3;
  s.patterns = 2;
  s.sigma = 1.0;
  s.seed = seed;
  return s;
}

inline std::vector<CheckResult> gradient_checks(std::size_t instances = 20, std::uint64_t seed = 7) {
  Rng rng(seed);
  std::vector<CheckResult> out;

  {
    CheckResult r{"dense"};
    for (std::size_t t = 0; t < instances; ++t) {
      Dense d(4, 3);
      d.weight() = detail::random_tensor(rng, {3, 4});
      d.bias() = detail::random_tensor(rng, {3});
      detail::check_layer(r, d, detail::random_tensor(rng, {2, 4}), rng, "dense");
    }
    out.push_back(r);
  }
  {
    CheckResult r{"relu"};
    for (std::size_t t = 0; t < instances; ++t) {
      Relu l;
      detail::check_layer(r, l, detail::off_kink_tensor(rng, {2, 6}), rng, "relu");
    }
    out.push_back(r);
  }
  {
    CheckResult r{"conv2d"};
    for (std::size_t t = 0; t < instances; ++t) {
      Conv2d c(4, 3, 2, 3);
      c.weight() = detail::random_tensor(rng, c.weight().shape());
      c.bias() = detail::random_tensor(rng, {3});
      detail::check_layer(r, c, detail::random_tensor(rng, {2, 4, 3, 2}), rng, "conv2d");
    }
    out.push_back(r);
  }
  {
    CheckResult r{"maxpool2d"};
    for (std::size_t t = 0; t < instances; ++t) {
      MaxPool2d p(4, 4, 2);
      detail::check_layer(r, p, detail::random_tensor(rng, {2, 4, 4, 2}), rng, "maxpool2d");
    }
    out.push_back(r);
  }
  {
    CheckResult soft{"softmax_ce_loss"}, sig{"sigmoid_bce_loss"};
    for (std::size_t t = 0; t < instances; ++t) {
      Tensor z = detail::random_tensor(rng, {5}, 2.0);
      const std::size_t label = rng.below(5);
      soft.record(relative_error(softmax_ce_loss(z.data(), label).grad_logits.data(),
                                 numeric_gradient([&] { return softmax_ce_loss(z.data(), label).loss; },
                                                  z.data())),
                  kFdTolerance, "softmax_ce");
      sig.record(relative_error(sigmoid_bce_loss(z.data(), label).grad_logits.data(),
                                numeric_gradient([&] { return sigmoid_bce_loss(z.data(), label).loss; },
                                                 z.data())),
                 kFdTolerance, "sigmoid_bce");
    }
    out.push_back(soft);
    out.push_back(sig);
  }
  {
    CheckResult pnn{"pnn_potential"}, de{"de_potential"};
    for (std::size_t t = 0; t < instances; ++t) {
      Tensor f = detail::random_tensor(rng, {4}), x = detail::random_tensor(rng, {4});
      const double sigma = 0.5 + rng.uniform();
      pnn.record(relative_error(pnn_potential_grad(f.data(), x.data(), sigma).data(),
                                numeric_gradient([&] { return pnn_potential(f.data(), x.data(), sigma); },
                                                 f.data())),
                 kFdTolerance, "pnn feat");
      Tensor s({4});
      for (double& v : s.data()) v = 0.5 + rng.uniform();
      const DeGrad g = de_potential_grad(f.data(), x.data(), s.data());
      auto k = [&] { return de_potential(f.data(), x.data(), s.data()); };
      de.record(relative_error(g.feat.data(), numeric_gradient(k, f.data())), kFdTolerance, "de feat");
      de.record(relative_error(g.pattern.data(), numeric_gradient(k, x.data())), kFdTolerance,
                "de pattern");
      de.record(relative_error(g.sigma.data(), numeric_gradient(k, s.data())), kFdTolerance,
                "de sigma");
    }
    out.push_back(pnn);
    out.push_back(de);
  }
  {
    CheckResult r{"head_probability"};
    for (std::size_t t = 0; t < instances; ++t) {
      const std::size_t m = 1 + rng.below(6);
      Tensor k({m});
      for (double& v : k.data()) v = 0.05 + 0.9 * rng.uniform();
      r.record(relative_error(head_probability_grad(k.data()).data(),
                              numeric_gradient([&] { return head_probability(k.data()); }, k.data())),
               kFdTolerance, "head_probability m=" + std::to_string(m));
    }
    out.push_back(r);
  }
  {
    // Whole networks: every head on both extractors, all trainable parameters
    // and the input.
    const HeadKind heads[] = {HeadKind::fc_softmax_ce, HeadKind::fc_sigmoid_bce, HeadKind::pnn,
                              HeadKind::de};
    for (ExtractorKind ext : {ExtractorKind::mlp, ExtractorKind::cnn}) {
      for (HeadKind h : heads) {
        CheckResult r{std::string("network ") + (ext == ExtractorKind::mlp ? "mlp" : "cnn") + "/" +
                      std::string(to_string(h))};
        for (std::size_t t = 0; t < instances; ++t) {
          NetworkSpec spec = tiny_spec(ext, h, rng.next_u64());
          Network net(spec);
          // Zero biases put dead units exactly on the relu kink.
          for (auto& p : net.parameters())
            if (p.name.ends_with("bias"))
              for (double& v : p.value->data()) v = 0.3 * rng.uniform() - 0.1;
          if (net.head().is_pattern_head()) {
            // Patterns near the feature scale keep potentials away from underflow.
            for (double& v : net.head().patterns().data()) v *= 0.5;
            if (h == HeadKind::de)
              for (double& v : net.head().log_sigma().data()) v = 0.5 * (rng.uniform() - 0.5);
          }
          Tensor x({2, spec.input_size()});
          for (double& v : x.data()) v = rng.uniform();
          const std::size_t labels[] = {rng.below(3), rng.below(3)};
          net.forward(x);
          net.backward(labels);
          const Tensor gx = net.input_grad();
          auto params = net.parameters();
          std::vector<Tensor> grads;
          for (const auto& p : params) grads.push_back(*p.grad);
          auto objective = [&] { return net.loss(x, labels); };
          const std::string tag = r.name + " #" + std::to_string(t);
          r.record(relative_error(gx.data(), numeric_gradient(objective, x.data())), kFdTolerance,
                   tag + " input");
          for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable) {
              double mx = 0.0;
              for (double g : grads[i].data()) mx = std::max(mx, std::abs(g));
              r.record(mx, 1e-300, tag + " frozen " + params[i].name);
              continue;
            }
            r.record(relative_error(grads[i].data(),
                                    numeric_gradient(objective, params[i].value->data())),
                     kFdTolerance, tag + " " + params[i].name);
          }
        }
        out.push_back(r);
      }
    }
  }
  return out;
}

// FGSM: eps = 0 identity, |x_adv - x|_inf <= eps and x_adv in [0, 1], exactly.
inline CheckResult fgsm_checks(std::size_t triples = 1000, std::uint64_t seed = 11) {
  Rng rng(seed);
  CheckResult r{"fgsm bounds"};
  const HeadKind heads[] = {HeadKind::fc_softmax_ce, HeadKind::fc_sigmoid_bce, HeadKind::pnn,
                            HeadKind::de};
  std::vector<Network> nets;
  for (ExtractorKind ext : {ExtractorKind::mlp, ExtractorKind::cnn})
    for (HeadKind h : heads) nets.emplace_back(tiny_spec(ext, h, rng.next_u64()));
  for (std::size_t t = 0; t < triples; ++t) {
    Network& net = nets[t % nets.size()];
    Tensor x({net.input_size()});
    for (double& v : x.data()) {
      const double u = rng.uniform();
      v = u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : rng.uniform());
    }
    const std::size_t label = rng.below(net.n_classes());
    const double eps = t % 10 == 0 ? 0.0 : 0.5 * rng.uniform();
    const Tensor adv = fgsm(net, x.data(), label, eps);
    double violation = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(adv[i] - x[i]) > eps) violation = std::max(violation, std::abs(adv[i] - x[i]) - eps);
      if (adv[i] < 0.0 || adv[i] > 1.0) violation = std::max(violation, 1.0);
      if (eps == 0.0 && adv[i] != x[i]) violation = std::max(violation, 1.0);
    }
    ++r.instances;
    if (violation > 0.0) {
      ++r.failures;
      r.worst = std::max(r.worst, violation);
      if (r.detail.empty()) r.detail = "triple " + std::to_string(t) + " violates the bound";
    }
  }
  return r;
}

// Summation rule: 0 < P <= m / (2m - 1) for m >= 2, P == K for m == 1,
// non-decreasing in every potential.
inline CheckResult head_probability_bounds(std::size_t samples = 10000, std::uint64_t seed = 13) {
  Rng rng(seed);
  CheckResult r{"head_probability bounds"};
  for (std::size_t t = 0; t < samples; ++t) {
    const std::size_t m = 1 + rng.below(8);
    std::vector<double> k(m);
    for (double& v : k) v = 1.0 - rng.uniform();  // (0, 1]
    const double p = head_probability(k);
    const double md = static_cast<double>(m);
    bool ok = p > 0.0 && p <= 1.0;
    if (m == 1) ok = ok && p == k[0];
    else ok = ok && p <= md / (2.0 * md - 1.0) * (1.0 + 1e-15);
    const std::size_t j = rng.below(m);
    std::vector<double> bumped = k;
    bumped[j] = std::min(1.0, k[j] + 0.5 * rng.uniform());
    ok = ok && head_probability(bumped) >= p * (1.0 - 1e-15);
    ++r.instances;
    if (!ok) {
      ++r.failures;
      if (r.detail.empty()) r.detail = "sample " + std::to_string(t) + " with m=" + std::to_string(m);
    }
  }
  return r;
}

inline std::vector<CheckResult> run_verify_suite() {
  auto out = gradient_checks();
  out.push_back(fgsm_checks());
  out.push_back(head_probability_bounds());
  return out;
}

}  // namespace advlab
