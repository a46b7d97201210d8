#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "sphevar/experiments/dataset.hpp"
#include "sphevar/metrics.hpp"
#include "sphevar/trainer.hpp"

namespace sphevar::experiments {

struct ClassifierConfig {
  std::vector<int> hidden{128, 128};
  TrainConfig train;
  double init_sigma_eff = 0.1;
  int mc_samples = 8;
  bool variational = true;
};

/// Method defaults; the baseline differs only by beta = 0 and deterministic layers.
inline ClassifierConfig default_method_config(std::uint64_t seed = 0) {
  ClassifierConfig c;
  c.train.epochs = 30;
  c.train.batch_size = 128;
  c.train.lr_base = 1e-3;
  c.train.lr_noise = 2e-2;
  c.train.beta_max = 1.0;
  c.train.warmup_epochs = 5;
  c.train.seed = seed;
  return c;
}

inline ClassifierConfig baseline_of(ClassifierConfig c) {
  c.variational = false;
  c.train.beta_max = 0.0;
  c.train.warmup_epochs = 0;
  return c;
}

struct ClassifierRun {
  VarNet net;
  std::vector<TrainRecord> records;
  CalibrationReport deterministic;  ///< S = 0
  CalibrationReport monte_carlo;    ///< S = mc_samples
};

inline ClassifierRun run_classifier(const DataSplit& data, const ClassifierConfig& cfg) {
  NetworkSpec spec;
  spec.input_dim = static_cast<int>(data.train.x.rows());
  spec.hidden = cfg.hidden;
  spec.outputs = std::max(data.train.classes, data.test.classes);
  spec.task = Task::Classification;
  spec.variational = cfg.variational;
  spec.init_sigma_eff = cfg.init_sigma_eff;
  spec.bn_momentum = cfg.train.bn_momentum;
  spec.bn_epsilon = cfg.train.bn_epsilon;
  Rng init = make_stream(cfg.train.seed, kInitStream);
  ClassifierRun run{VarNet::init(spec, init), {}, {}, {}};
  run.records = train(run.net, data.train, cfg.train, &data.test);
  run.deterministic = ece(predict(run.net, data.test.x, 0), data.test.labels);
  Rng eval = make_stream(cfg.train.seed, kEvalStream);
  run.monte_carlo = cfg.mc_samples > 0 && cfg.variational
                        ? ece(predict(run.net, data.test.x, cfg.mc_samples, &eval), data.test.labels)
                        : run.deterministic;
  return run;
}

struct ClassifierComparison {
  ClassifierRun method;
  ClassifierRun baseline;
};

/// Trains method and baseline on identical data and seeds.
inline ClassifierComparison classifier_study(const DataSplit& data, const ClassifierConfig& method,
                                             const ClassifierConfig& baseline) {
  return {run_classifier(data, method), run_classifier(data, baseline)};
}

}  // namespace sphevar::experiments
