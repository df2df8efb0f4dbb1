#pragma once

// Illusive samples: training samples that every one of several independently
// initialised shallow classifiers still gets wrong after training.

#include <set>
#include <vector>

#include "advlab/data.hpp"
#include "advlab/eval.hpp"
#include "advlab/optim.hpp"

namespace advlab {

struct IllusiveSelection {
  std::set<std::size_t> indices;
  // Per training sample: how many runs classified it correctly at the end.
  std::vector<std::size_t> correct_runs;
  std::size_t n_runs = 0;
};

// Run r uses network seed derive_seed(base_seed, 2r) and shuffle seed
// derive_seed(base_seed, 2r + 1); runs are independent of execution order.
inline IllusiveSelection select_illusive(const LabeledDataset& train_ds, std::size_t n_runs,
                                         NetworkSpec shallow, std::size_t epochs,
                                         std::uint64_t base_seed, std::size_t batch_size = 128,
                                         double learning_rate = 0.01) {
  require(n_runs >= 1, ErrorKind::config, "select_illusive needs n_runs >= 1");
  IllusiveSelection sel;
  sel.n_runs = n_runs;
  sel.correct_runs.assign(train_ds.size(), 0);
  for (std::size_t r = 0; r < n_runs; ++r) {
    shallow.seed = derive_seed(base_seed, 2 * r);
    shallow.n_classes = train_ds.n_classes();
    Network net(shallow);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.learning_rate = learning_rate;
    cfg.seed = derive_seed(base_seed, 2 * r + 1);
    train(net, train_ds, cfg);
    const Tensor probs = predict(net, train_ds);
    for (std::size_t i = 0; i < train_ds.size(); ++i)
      if (argmax(probs.row(i)) == train_ds.label(i)) ++sel.correct_runs[i];
  }
  for (std::size_t i = 0; i < train_ds.size(); ++i)
    if (sel.correct_runs[i] == 0) sel.indices.insert(i);
  return sel;
}

}  // namespace advlab
