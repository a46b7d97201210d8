#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "sphevar/metrics.hpp"
#include "sphevar/varnet.hpp"

namespace sphevar {

/// Accuracy / NLL / ECE of a classifier on `data` with `mc_samples` passes.
inline EvalMetrics evaluate_classifier(const VarNet& net, const Dataset& data, int mc_samples, Rng* rng = nullptr,
                                       int n_bins = 15) {
  const Eigen::MatrixXd p = predict(net, data.x, mc_samples, rng);
  const auto report = ece(p, data.labels, n_bins);
  return {report.accuracy, report.nll, report.ece};
}

/// Random streams used by training, derived from the config seed.
enum TrainStream : std::uint64_t { kInitStream = 0, kShuffleStream = 1, kNoiseStream = 2, kEvalStream = 3 };

/// Minibatch training for `cfg.epochs` epochs. Each epoch reshuffles the
/// data; the last partial batch is kept when it has at least two examples.
/// When `eval` is given, classification metrics of the deterministic pass
/// are attached to every record.
inline std::vector<TrainRecord> train(VarNet& net, const Dataset& data, const TrainConfig& cfg,
                                      const Dataset* eval = nullptr,
                                      const std::function<void(const TrainRecord&)>& on_epoch = {}) {
  cfg.validate();
  detail::require_domain(data.size() >= 2, "train: need at least two examples");
  const double kl_scale = cfg.kl_scale.value_or(1.0 / static_cast<double>(data.size()));
  Optimizer opt(net, cfg);
  Rng shuffle_rng = make_stream(cfg.seed, kShuffleStream);
  Rng noise_rng = make_stream(cfg.seed, kNoiseStream);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);

  std::vector<TrainRecord> records;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double beta = kl_beta(cfg, epoch);
    double nll = 0.0, kl = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t len = std::min(bs, order.size() - start);
      if (len < 2) break;
      const Batch batch = data.gather(std::span<const Eigen::Index>(order.data() + start, len));
      const ObjectiveValue v = backward_and_step(net, opt, batch, beta, kl_scale, noise_rng);
      nll += v.nll;
      kl += v.kl_total;
      ++steps;
    }
    TrainRecord rec;
    rec.epoch = epoch;
    rec.beta = beta;
    rec.nll = nll / steps;
    rec.kl_total = kl / steps;
    rec.kl_scale = kl_scale;
    rec.loss = rec.nll + beta * kl_scale * rec.kl_total;
    rec.sigma_eff = net.sigma_eff();
    if (eval && net.task() == Task::Classification) rec.eval = evaluate_classifier(net, *eval, 0);
    if (on_epoch) on_epoch(rec);
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace sphevar
