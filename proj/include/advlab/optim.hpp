#pragma once

// Adam with coupled L2 weight decay, and the mini-batch training loop.

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/eval.hpp"
#include "advlab/network.hpp"

namespace advlab {

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;
};

// One Adam update over `params`. The decay term weight_decay * w is added to
// the gradient of every parameter flagged `decay`; frozen parameters are
// left untouched.
inline void adam_step(std::span<const ParamRef> params, AdamState& state, double lr,
                      double weight_decay) {
  require(lr > 0.0, ErrorKind::range, "learning rate must be positive");
  require(weight_decay >= 0.0, ErrorKind::range, "weight decay must be non-negative");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.value->shape());
      state.second_moment.emplace_back(p.value->shape());
    }
  }
  require(state.first_moment.size() == params.size(), ErrorKind::shape,
          "Adam state tracks " + std::to_string(state.first_moment.size()) +
              " parameters, got " + std::to_string(params.size()));
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(AdamState::beta1, t);
  const double c2 = 1.0 - std::pow(AdamState::beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamRef& p = params[i];
    Tensor& w = *p.value;
    const Tensor& g = *p.grad;
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    require(w.shape() == g.shape() && w.shape() == m.shape(), ErrorKind::shape,
            "parameter " + p.name + " shape " + to_string(w.shape()) +
                " does not match its gradient or Adam state");
    if (!p.trainable) continue;
    const double wd = p.decay ? weight_decay : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] + wd * w[j];
      m[j] = AdamState::beta1 * m[j] + (1.0 - AdamState::beta1) * gj;
      v[j] = AdamState::beta2 * v[j] + (1.0 - AdamState::beta2) * gj * gj;
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + AdamState::epsilon);
    }
  }
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    require(epochs >= 1, ErrorKind::config, "epochs must be >= 1");
    require(batch_size >= 1, ErrorKind::config, "batch size must be >= 1");
    require(learning_rate > 0.0, ErrorKind::config, "learning rate must be positive");
    require(weight_decay >= 0.0, ErrorKind::config, "weight decay must be non-negative");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();  // NaN when no test set
};

using TrainLog = std::vector<EpochLog>;

// Trains in place. Each epoch shuffles with its own child generator of
// cfg.seed, so data order does not depend on initialisation draws.
inline TrainLog train(Network& net, const LabeledDataset& data, const TrainConfig& cfg,
                      const LabeledDataset* test = nullptr) {
  cfg.validate();
  require(!data.empty(), ErrorKind::range, "training set is empty");
  require(data.n_classes() == net.n_classes(), ErrorKind::config,
          "dataset has " + std::to_string(data.n_classes()) + " classes, network has " +
              std::to_string(net.n_classes()));
  require(data.sample_size() == net.input_size(), ErrorKind::shape,
          "dataset samples have " + std::to_string(data.sample_size()) + " values, network expects " +
              std::to_string(net.input_size()));

  auto params = net.parameters();
  AdamState state;
  TrainLog log;
  const Rng shuffle_root(derive_seed(cfg.seed, "shuffle"));
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = shuffle_root.child(epoch);
    const auto order = permutation(rng, data.size());
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto labels = data.gather_labels(idx);
      const Tensor probs = net.forward(data.gather(idx));
      const double loss = net.backward(labels);
      require(std::isfinite(loss), ErrorKind::degenerate,
              "training loss became non-finite in epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b)
        if (argmax(probs.row(b)) == labels[b]) ++hits;
      adam_step(params, state, cfg.learning_rate, cfg.weight_decay);
    }
    EpochLog e;
    e.epoch = epoch;
    e.mean_loss = loss_sum / static_cast<double>(data.size());
    e.train_accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
    if (test) e.test_accuracy = accuracy(predict(net, *test), test->labels());
    log.push_back(e);
  }
  return log;
}

inline std::string train_log_csv(const TrainLog& log) {
  std::string s = "epoch,mean_loss,train_accuracy,test_accuracy\n";
  for (const auto& e : log) {
    s += std::to_string(e.epoch) + "," + format_double(e.mean_loss) + "," +
         format_double(e.train_accuracy) + "," +
         (std::isnan(e.test_accuracy) ? std::string() : format_double(e.test_accuracy)) + "\n";
  }
  return s;
}

inline void write_train_log_csv(const TrainLog& log, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), ErrorKind::io, "cannot open " + path + " for writing");
  os << train_log_csv(log);
}

// Sum of squared dense/conv weights (biases excluded).
inline double weight_norm_sq(Network& net) {
  double s = 0.0;
  for (const auto& p : net.parameters()) {
    if (!p.decay || !p.name.ends_with("weight")) continue;
    for (double v : p.value->data()) s += v * v;
  }
  return s;
}

}  // namespace advlab
