#pragma once

// Fast Gradient Sign Method and epsilon sweeps.
//
//   x_adv = clip_[0,1](x + eps * sign(dL/dx))
//
// L is the attacked network's own training loss at the true label. The
// gradient is taken at the clean input, so a sweep computes it once per
// sample and reuses its sign for every epsilon.

#include <cmath>
#include <string>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/eval.hpp"
#include "advlab/network.hpp"

namespace advlab {

struct AttackSpec {
  std::vector<double> epsilon_grid;

  static AttackSpec grid(double eps_max = 0.30, double eps_step = 0.02) {
    require(eps_step > 0.0 && eps_max >= 0.0, ErrorKind::config,
            "epsilon grid needs eps_step > 0 and eps_max >= 0");
    AttackSpec s;
    const auto n = static_cast<std::size_t>(std::floor(eps_max / eps_step + 1e-9));
    // i * step rounded to 12 decimals keeps grid points like 0.3 exact in text
    for (std::size_t i = 0; i <= n; ++i)
      s.epsilon_grid.push_back(std::round(static_cast<double>(i) * eps_step * 1e12) / 1e12);
    return s;
  }

  void validate() const {
    require(!epsilon_grid.empty() && epsilon_grid.front() == 0.0, ErrorKind::config,
            "epsilon grid must start at 0");
    for (std::size_t i = 1; i < epsilon_grid.size(); ++i)
      require(epsilon_grid[i] > epsilon_grid[i - 1], ErrorKind::config,
              "epsilon grid must be strictly ascending");
  }
};

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Applies a precomputed gradient sign: clip(x + eps * s) into [0, 1].
// A rounded-up sum is stepped back toward x so |x_adv - x| <= eps holds in
// floating point, not just in exact arithmetic.
inline Tensor apply_sign_step(const Tensor& x, const Tensor& signs, double eps) {
  require(x.shape() == signs.shape(), ErrorKind::shape, "sign tensor does not match input");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double y = std::clamp(x[i] + eps * signs[i], 0.0, 1.0);
    while (std::abs(y - x[i]) > eps) y = std::nextafter(y, x[i]);
    out[i] = y;
  }
  return out;
}

// Signs of the input gradient of the per-sample loss, for a batch.
inline Tensor loss_gradient_signs(Network& net, const Tensor& x,
                                  std::span<const std::size_t> labels) {
  for (std::size_t l : labels) check_label(l, net.n_classes());
  net.forward(x);
  // Summed loss: each sample's gradient is exactly its own loss gradient.
  net.backward(labels, Reduction::sum);
  Tensor s = net.input_grad();
  for (double& v : s.data()) v = sign(v);
  return s;
}

// Batch FGSM. x is [batch, ...] with values in [0, 1].
inline Tensor fgsm(Network& net, const Tensor& x, std::span<const std::size_t> labels, double eps) {
  require(eps >= 0.0, ErrorKind::range, "epsilon must be non-negative");
  require(x.rank() >= 2 && x.dim(0) == labels.size(), ErrorKind::shape,
          "fgsm needs one label per sample");
  return apply_sign_step(x, loss_gradient_signs(net, x, labels), eps);
}

inline Tensor fgsm(Network& net, std::span<const double> x, std::size_t label, double eps) {
  Tensor batch({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  const std::size_t labels[] = {label};
  return fgsm(net, batch, labels, eps).reshaped({x.size()});
}

// Accuracy and mean confidence on FGSM versions of every sample, per epsilon.
// The eps = 0 row is bit-identical to predict() on the clean set.
inline RobustnessCurve sweep(Network& net, const LabeledDataset& test, const AttackSpec& spec,
                             std::size_t batch = kEvalBatch) {
  spec.validate();
  require(!test.empty(), ErrorKind::range, "sweep needs a non-empty test set");
  const std::size_t n_eps = spec.epsilon_grid.size();
  std::vector<std::size_t> hits(n_eps, 0);
  std::vector<double> conf(n_eps, 0.0);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += batch) {
    const std::size_t end = std::min(test.size(), start + batch);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = test.gather(idx);
    const auto labels = test.gather_labels(idx);
    const Tensor signs = loss_gradient_signs(net, x, labels);
    for (std::size_t e = 0; e < n_eps; ++e) {
      const Tensor probs = net.forward(apply_sign_step(x, signs, spec.epsilon_grid[e]));
      for (std::size_t b = 0; b < idx.size(); ++b) {
        auto row = probs.row(b);
        const std::size_t pred = argmax(row);
        if (pred == labels[b]) ++hits[e];
        conf[e] += row[pred];
      }
    }
  }
  RobustnessCurve c;
  c.epsilons = spec.epsilon_grid;
  c.n_samples = test.size();
  c.dataset_id = test.name();
  c.model_id = net.spec().to_string();
  for (std::size_t e = 0; e < n_eps; ++e) {
    c.accuracy.push_back(static_cast<double>(hits[e]) / static_cast<double>(test.size()));
    c.mean_confidence.push_back(conf[e] / static_cast<double>(test.size()));
  }
  return c;
}

}  // namespace advlab
