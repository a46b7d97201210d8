#pragma once

// Feed-forward networks built from noisy normalized blocks
//   u = W x,  y = BN(u) + sigma_eff * eps,  h = relu(y)
// with unit-norm weight rows, BN without affine parameters, one learned
// noise scale per block and a plain affine readout.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sphevar/error.hpp"
#include "sphevar/klvar.hpp"
#include "sphevar/rng.hpp"

namespace sphevar {

inline double softplus(double r) noexcept { return r > 35.0 ? r : std::log1p(std::exp(r)); }

inline double softplus_inverse(double s) {
  detail::require_domain(std::isfinite(s) && s > 0.0, "softplus_inverse: argument must be > 0");
  return s > 35.0 ? s : std::log(std::expm1(s));
}

inline double sigmoid(double r) noexcept {
  return r >= 0.0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r));
}

/// Learned noise scale sigma_eff = softplus(rho) shared by the `multiplicity`
/// output units of a block whose input dimension is `dim`.
class EffNoiseParam {
 public:
  EffNoiseParam(double rho, int multiplicity, int dim) : rho_(rho), multiplicity_(multiplicity), dim_(dim) {
    detail::require_domain(std::isfinite(rho), "rho must be finite");
    detail::require_domain(multiplicity >= 1, "multiplicity must be >= 1");
    detail::require_domain(dim >= 2, "noise dimension must be >= 2");
  }

  static EffNoiseParam from_sigma(double sigma_eff, int multiplicity, int dim) {
    return EffNoiseParam(softplus_inverse(sigma_eff), multiplicity, dim);
  }

  double rho() const noexcept { return rho_; }
  void set_rho(double rho) {
    detail::require_domain(std::isfinite(rho), "rho must be finite");
    rho_ = rho;
  }
  int multiplicity() const noexcept { return multiplicity_; }
  int dim() const noexcept { return dim_; }
  double sigma_eff() const noexcept { return softplus(rho_); }

  /// M * kl_approx(sigma_eff, D)
  double kl() const { return multiplicity_ * kl_approx(EffNoiseSpec(sigma_eff(), dim_)); }

  /// d kl() / d rho
  double kl_grad_rho() const {
    return multiplicity_ * kl_approx_grad(EffNoiseSpec(sigma_eff(), dim_)) * sigmoid(rho_);
  }

 private:
  double rho_;
  int multiplicity_;
  int dim_;
};

// ---------------------------------------------------------------------------
// Batch normalization (affine=False). Units are rows, examples are columns.

struct BatchNormState {
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormState() = default;
  BatchNormState(int units, double momentum_, double epsilon_)
      : running_mean(Eigen::VectorXd::Zero(units)),
        running_var(Eigen::VectorXd::Ones(units)),
        momentum(momentum_),
        epsilon(epsilon_) {
    detail::require_domain(units >= 1, "batch norm needs at least one unit");
    detail::require_domain(momentum_ > 0.0 && momentum_ <= 1.0, "bn momentum must lie in (0, 1]");
    detail::require_domain(epsilon_ > 0.0, "bn epsilon must be positive");
  }
};

enum class BnMode { Train, Eval };

/// Per-unit batch mean and biased variance.
struct BatchStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

inline BatchStats batch_statistics(const Eigen::MatrixXd& u) {
  BatchStats s;
  s.mean = u.rowwise().mean();
  s.var = (u.colwise() - s.mean).rowwise().squaredNorm() / static_cast<double>(u.cols());
  return s;
}

inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& u, const Eigen::VectorXd& mean,
                                   const Eigen::VectorXd& var, double epsilon) {
  const Eigen::VectorXd inv_std = (var.array() + epsilon).rsqrt();
  return (u.colwise() - mean).array().colwise() * inv_std.array();
}

/// EMA update of the running statistics; the running variance uses the
/// unbiased batch estimate.
inline void update_running_stats(BatchNormState& state, const BatchStats& stats, Eigen::Index batch) {
  const double n = static_cast<double>(batch);
  const double correction = n > 1 ? n / (n - 1.0) : 1.0;
  state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * stats.mean;
  state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * correction * stats.var;
}

/// Train mode standardizes by batch statistics and updates the running
/// estimates; eval mode standardizes by the running estimates.
inline Eigen::MatrixXd batchnorm_forward(const Eigen::MatrixXd& u, BatchNormState& state, BnMode mode) {
  detail::require_domain(u.rows() == state.running_mean.size(), "batchnorm_forward: unit count mismatch");
  if (mode == BnMode::Eval) return standardize(u, state.running_mean, state.running_var, state.epsilon);
  detail::require_domain(u.cols() >= 2, "batchnorm_forward: train mode needs batch size >= 2");
  const BatchStats s = batch_statistics(u);
  update_running_stats(state, s, u.cols());
  return standardize(u, s.mean, s.var, state.epsilon);
}

// ---------------------------------------------------------------------------
// Network

enum class Task { Classification, Regression };

inline void normalize_rows(Eigen::MatrixXd& w) {
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const double n = w.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw NumericalError("weight row has zero or non-finite norm");
    w.row(i) /= n;
  }
}

struct NoisyNormLayer {
  Eigen::MatrixXd weights;  ///< out x in, unit-norm rows
  BatchNormState bn;
  EffNoiseParam noise;
  bool variational = true;  ///< false: no noise and no KL term

  int in_dim() const noexcept { return static_cast<int>(weights.cols()); }
  int out_dim() const noexcept { return static_cast<int>(weights.rows()); }
};

struct Readout {
  Eigen::MatrixXd weights;  ///< outputs x last hidden width
  Eigen::VectorXd bias;
};

struct NetworkSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int outputs = 1;
  Task task = Task::Classification;
  bool variational = true;
  double init_sigma_eff = 0.1;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
};

class VarNet {
 public:
  /// Rows of every hidden weight matrix are isotropic unit vectors; the
  /// readout is N(0, 1/width) with zero bias.
  static VarNet init(const NetworkSpec& spec, Rng& rng) {
    detail::require_domain(spec.input_dim >= 2, "network input dimension must be >= 2");
    detail::require_domain(!spec.hidden.empty(), "network needs at least one hidden layer");
    detail::require_domain(spec.outputs >= 1, "network needs at least one output");
    detail::require_domain(spec.task == Task::Classification ? spec.outputs >= 2 : spec.outputs == 1,
                           "classification needs >= 2 outputs, regression exactly 1");
    VarNet net;
    net.task_ = spec.task;
    std::normal_distribution<double> normal(0.0, 1.0);
    int in = spec.input_dim;
    for (int width : spec.hidden) {
      detail::require_domain(width >= 2, "hidden widths must be >= 2");
      Eigen::MatrixXd w(width, in);
      for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = normal(rng);
      normalize_rows(w);
      net.layers_.push_back({std::move(w), BatchNormState(width, spec.bn_momentum, spec.bn_epsilon),
                             EffNoiseParam::from_sigma(spec.init_sigma_eff, width, in), spec.variational});
      in = width;
    }
    net.readout_.weights.resize(spec.outputs, in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index j = 0; j < net.readout_.weights.cols(); ++j)
      for (Eigen::Index i = 0; i < net.readout_.weights.rows(); ++i) net.readout_.weights(i, j) = scale * normal(rng);
    net.readout_.bias = Eigen::VectorXd::Zero(spec.outputs);
    return net;
  }

  VarNet() = default;
  VarNet(Task task, std::vector<NoisyNormLayer> layers, Readout readout, double log_var)
      : task_(task), layers_(std::move(layers)), readout_(std::move(readout)), log_var_(log_var) {
    detail::require_domain(!layers_.empty(), "network needs at least one hidden layer");
    int in = layers_.front().in_dim();
    for (auto& l : layers_) {
      detail::require_domain(l.in_dim() == in, "layer shapes do not chain");
      for (Eigen::Index i = 0; i < l.weights.rows(); ++i)
        detail::require_domain(std::abs(l.weights.row(i).norm() - 1.0) <= 1e-8, "weight rows must be unit-norm");
      in = l.out_dim();
    }
    detail::require_domain(readout_.weights.cols() == in && readout_.bias.size() == readout_.weights.rows(),
                           "readout shape mismatch");
  }

  Task task() const noexcept { return task_; }
  int input_dim() const noexcept { return layers_.front().in_dim(); }
  int outputs() const noexcept { return static_cast<int>(readout_.weights.rows()); }
  std::size_t depth() const noexcept { return layers_.size(); }

  const std::vector<NoisyNormLayer>& layers() const noexcept { return layers_; }
  std::vector<NoisyNormLayer>& layers() noexcept { return layers_; }
  const Readout& readout() const noexcept { return readout_; }
  Readout& readout() noexcept { return readout_; }

  /// Global observation log-variance (regression only).
  double log_var() const noexcept { return log_var_; }
  void set_log_var(double s) { log_var_ = s; }

  /// Overwrites a layer's weights; rows are renormalized to unit norm.
  void set_layer_weights(std::size_t layer, Eigen::MatrixXd w) {
    detail::require_domain(layer < layers_.size(), "layer index out of range");
    detail::require_domain(w.rows() == layers_[layer].weights.rows() && w.cols() == layers_[layer].weights.cols(),
                           "set_layer_weights: shape mismatch");
    normalize_rows(w);
    layers_[layer].weights = std::move(w);
  }

  /// Sum over variational layers of M * kl_approx(sigma_eff, D).
  double kl_total() const {
    double kl = 0.0;
    for (const auto& l : layers_)
      if (l.variational) kl += l.noise.kl();
    return kl;
  }

  std::vector<double> sigma_eff() const {
    std::vector<double> s;
    for (const auto& l : layers_) s.push_back(l.variational ? l.noise.sigma_eff() : 0.0);
    return s;
  }

 private:
  Task task_ = Task::Classification;
  std::vector<NoisyNormLayer> layers_;
  Readout readout_;
  double log_var_ = 0.0;
};

// ---------------------------------------------------------------------------
// Forward pass

enum class NoiseMode { Off, Sample, Fixed };

struct ForwardOptions {
  BnMode bn = BnMode::Train;  ///< Train: batch statistics (never mutates the model)
  NoiseMode noise = NoiseMode::Sample;
  Rng* rng = nullptr;                                ///< for NoiseMode::Sample
  const std::vector<Eigen::MatrixXd>* fixed = nullptr;  ///< for NoiseMode::Fixed, one matrix per layer
};

struct LayerCache {
  Eigen::MatrixXd input;
  Eigen::MatrixXd xhat;
  Eigen::VectorXd inv_std;
  Eigen::MatrixXd eps;  ///< empty when no noise was added
  Eigen::MatrixXd pre_activation;
  BatchStats stats;
};

struct ForwardResult {
  Eigen::MatrixXd output;  ///< logits (classification) or predictions (regression)
  Eigen::MatrixXd features;
  std::vector<LayerCache> layers;
};

inline ForwardResult forward(const VarNet& net, const Eigen::MatrixXd& x, const ForwardOptions& opt) {
  detail::require_domain(x.rows() == net.input_dim(), "forward: input dimension mismatch");
  detail::require_domain(x.cols() >= 1, "forward: empty batch");
  if (opt.noise == NoiseMode::Sample) detail::require_domain(opt.rng != nullptr, "forward: noise needs an rng");
  if (opt.noise == NoiseMode::Fixed)
    detail::require_domain(opt.fixed != nullptr && opt.fixed->size() == net.depth(), "forward: fixed noise missing");
  const Eigen::Index batch = x.cols();
  ForwardResult r;
  r.layers.resize(net.depth());
  Eigen::MatrixXd h = x;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t l = 0; l < net.depth(); ++l) {
    const auto& layer = net.layers()[l];
    auto& c = r.layers[l];
    const Eigen::MatrixXd u = layer.weights * h;
    c.input = std::move(h);
    if (opt.bn == BnMode::Train) {
      detail::require_domain(batch >= 2, "forward: batch statistics need batch size >= 2");
      c.stats = batch_statistics(u);
      c.inv_std = (c.stats.var.array() + layer.bn.epsilon).rsqrt();
      c.xhat = (u.colwise() - c.stats.mean).array().colwise() * c.inv_std.array();
    } else {
      c.inv_std = (layer.bn.running_var.array() + layer.bn.epsilon).rsqrt();
      c.xhat = (u.colwise() - layer.bn.running_mean).array().colwise() * c.inv_std.array();
    }
    c.pre_activation = c.xhat;
    if (layer.variational && opt.noise != NoiseMode::Off) {
      if (opt.noise == NoiseMode::Sample) {
        c.eps.resize(u.rows(), batch);
        for (Eigen::Index j = 0; j < batch; ++j)
          for (Eigen::Index i = 0; i < u.rows(); ++i) c.eps(i, j) = normal(*opt.rng);
      } else {
        c.eps = (*opt.fixed)[l];
        detail::require_domain(c.eps.rows() == u.rows() && c.eps.cols() == batch, "fixed noise shape mismatch");
      }
      c.pre_activation += layer.noise.sigma_eff() * c.eps;
    }
    h = c.pre_activation.cwiseMax(0.0);
  }
  r.output = (net.readout().weights * h).colwise() + net.readout().bias;
  r.features = std::move(h);
  return r;
}

/// Draws the noise a stochastic forward pass over a batch of `batch` columns would use.
inline std::vector<Eigen::MatrixXd> draw_noise(const VarNet& net, Eigen::Index batch, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::MatrixXd> eps;
  for (const auto& l : net.layers()) {
    Eigen::MatrixXd e(l.out_dim(), batch);
    for (Eigen::Index j = 0; j < batch; ++j)
      for (Eigen::Index i = 0; i < e.rows(); ++i) e(i, j) = normal(rng);
    eps.push_back(std::move(e));
  }
  return eps;
}

// ---------------------------------------------------------------------------
// Objective and gradients

/// Examples are columns of x; classification uses labels, regression uses targets.
struct Batch {
  Eigen::MatrixXd x;
  std::vector<int> labels;
  Eigen::VectorXd targets;

  Eigen::Index size() const noexcept { return x.cols(); }
};

struct ObjectiveValue {
  double loss = 0.0;
  double nll = 0.0;
  double kl_total = 0.0;
};

inline Eigen::MatrixXd softmax_columns(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits.rowwise() - logits.colwise().maxCoeff();
  p = p.array().exp();
  return p.array().rowwise() / p.colwise().sum().array();
}

/// Mean negative log-likelihood of the batch and d nll / d output.
inline double mean_nll(const VarNet& net, const Eigen::MatrixXd& output, const Batch& batch,
                       Eigen::MatrixXd* d_output = nullptr, double* d_log_var = nullptr) {
  const double n = static_cast<double>(output.cols());
  if (net.task() == Task::Classification) {
    detail::require_domain(batch.labels.size() == static_cast<std::size_t>(output.cols()), "labels size mismatch");
    const Eigen::RowVectorXd max = output.colwise().maxCoeff();
    const Eigen::MatrixXd shifted = output.rowwise() - max;
    const Eigen::RowVectorXd log_z = shifted.array().exp().colwise().sum().log();
    double nll = 0.0;
    for (Eigen::Index j = 0; j < output.cols(); ++j) {
      const int y = batch.labels[static_cast<std::size_t>(j)];
      detail::require_domain(y >= 0 && y < output.rows(), "label out of range");
      nll += log_z(j) - shifted(y, j);
    }
    if (d_output) {
      *d_output = (shifted.rowwise() - log_z).array().exp();
      for (Eigen::Index j = 0; j < output.cols(); ++j) (*d_output)(batch.labels[static_cast<std::size_t>(j)], j) -= 1.0;
      *d_output /= n;
    }
    return nll / n;
  }
  detail::require_domain(batch.targets.size() == output.cols(), "targets size mismatch");
  const double s = net.log_var();
  const Eigen::RowVectorXd r = batch.targets.transpose() - output.row(0);
  const double inv_var = std::exp(-s);
  const double mse = r.squaredNorm() / n;
  if (d_output) *d_output = (-inv_var / n) * r;
  if (d_log_var) *d_log_var = 0.5 * (1.0 - mse * inv_var);
  return 0.5 * (std::log(2.0 * std::numbers::pi) + s + mse * inv_var);
}

/// loss = nll + beta * kl_scale * kl_total. With kl_scale = 1 this is the
/// per-model objective; trainers pass 1/N_train to put the KL on a per-example footing.
inline ObjectiveValue objective(const VarNet& net, const ForwardResult& fr, const Batch& batch, double beta,
                                double kl_scale = 1.0) {
  ObjectiveValue v;
  v.nll = mean_nll(net, fr.output, batch);
  v.kl_total = net.kl_total();
  v.loss = v.nll + beta * kl_scale * v.kl_total;
  if (!std::isfinite(v.loss)) throw NumericalError("objective: non-finite loss");
  return v;
}

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<double> rho;
  Eigen::MatrixXd readout_weights;
  Eigen::VectorXd readout_bias;
  double log_var = 0.0;

  double squared_norm() const {
    double s = readout_weights.squaredNorm() + readout_bias.squaredNorm() + log_var * log_var;
    for (const auto& w : weights) s += w.squaredNorm();
    for (double r : rho) s += r * r;
    return s;
  }
};

/// Reverse-mode gradient of objective() for the forward pass `fr`. With
/// BnMode::Train the gradient flows through the batch mean and variance.
inline Gradients backward(const VarNet& net, const ForwardResult& fr, const Batch& batch, double beta,
                          double kl_scale, BnMode bn_mode, ObjectiveValue* value = nullptr) {
  Gradients g;
  Eigen::MatrixXd d_out;
  double d_log_var = 0.0;
  const double nll = mean_nll(net, fr.output, batch, &d_out, &d_log_var);
  if (value) {
    value->nll = nll;
    value->kl_total = net.kl_total();
    value->loss = nll + beta * kl_scale * value->kl_total;
    if (!std::isfinite(value->loss)) throw NumericalError("objective: non-finite loss");
  }
  g.log_var = net.task() == Task::Regression ? d_log_var : 0.0;
  g.readout_weights = d_out * fr.features.transpose();
  g.readout_bias = d_out.rowwise().sum();
  Eigen::MatrixXd dh = net.readout().weights.transpose() * d_out;

  const std::size_t depth = net.depth();
  g.weights.resize(depth);
  g.rho.assign(depth, 0.0);
  const double n = static_cast<double>(batch.size());
  for (std::size_t k = depth; k-- > 0;) {
    const auto& layer = net.layers()[k];
    const auto& c = fr.layers[k];
    const Eigen::MatrixXd dz = (c.pre_activation.array() > 0.0).select(dh, 0.0);
    if (layer.variational) {
      const double sig = sigmoid(layer.noise.rho());
      const double d_sigma = c.eps.size() ? (dz.array() * c.eps.array()).sum() : 0.0;
      g.rho[k] = d_sigma * sig + beta * kl_scale * layer.noise.kl_grad_rho();
    }
    Eigen::MatrixXd du;
    if (bn_mode == BnMode::Train) {
      const Eigen::VectorXd sum_d = dz.rowwise().sum();
      const Eigen::VectorXd sum_dx = (dz.array() * c.xhat.array()).rowwise().sum();
      du = (n * dz - c.xhat.cwiseProduct(sum_dx.replicate(1, dz.cols()))).colwise() - sum_d;
      du = du.array().colwise() * (c.inv_std.array() / n);
    } else {
      du = dz.array().colwise() * c.inv_std.array();
    }
    g.weights[k] = du * c.input.transpose();
    if (k > 0) dh = layer.weights.transpose() * du;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { Adam, SGD };

struct TrainConfig {
  double beta_max = 1.0;
  int warmup_epochs = 0;
  int epochs = 10;
  int batch_size = 256;
  double lr_base = 1e-3;
  double lr_noise = 2e-2;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  /// Multiplier on kl_total inside the loss; unset means 1 / N_train.
  std::optional<double> kl_scale;
  double grad_norm_cap = 1e6;

  void validate() const {
    auto check = [](bool ok, const char* what) {
      if (!ok) throw ConfigError(what);
    };
    check(beta_max >= 0.0 && beta_max <= 1.0, "beta_max must lie in [0, 1]");
    check(warmup_epochs >= 0, "warmup_epochs must be >= 0");
    check(epochs >= 1, "epochs must be >= 1");
    check(batch_size >= 2, "batch_size must be >= 2");
    check(lr_base > 0.0 && std::isfinite(lr_base), "lr_base must be positive");
    check(lr_noise > 0.0 && std::isfinite(lr_noise), "lr_noise must be positive");
    check(bn_momentum > 0.0 && bn_momentum <= 1.0, "bn_momentum must lie in (0, 1]");
    check(bn_epsilon > 0.0, "bn_epsilon must be positive");
    check(!kl_scale || (*kl_scale >= 0.0 && std::isfinite(*kl_scale)), "kl_scale must be >= 0");
    check(grad_norm_cap > 0.0, "grad_norm_cap must be positive");
  }
};

/// beta(epoch) = min(1, epoch / warmup) * beta_max, epochs counted from 0.
inline double kl_beta(const TrainConfig& cfg, int epoch) {
  if (cfg.warmup_epochs == 0) return cfg.beta_max;
  return std::min(1.0, static_cast<double>(epoch) / cfg.warmup_epochs) * cfg.beta_max;
}

/// Adam or SGD with separate learning rates for base parameters and rho.
class Optimizer {
 public:
  Optimizer(const VarNet& net, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& l : net.layers()) {
      m_.weights.push_back(Eigen::MatrixXd::Zero(l.out_dim(), l.in_dim()));
      m_.rho.push_back(0.0);
    }
    m_.readout_weights = Eigen::MatrixXd::Zero(net.readout().weights.rows(), net.readout().weights.cols());
    m_.readout_bias = Eigen::VectorXd::Zero(net.readout().bias.size());
    v_ = m_;
  }

  /// Applies one update, then renormalizes every weight row.
  void step(VarNet& net, const Gradients& g) {
    const double gn = std::sqrt(g.squared_norm());
    if (!std::isfinite(gn)) throw NumericalError("non-finite gradient");
    if (gn > cfg_.grad_norm_cap)
      throw NumericalError("gradient norm " + std::to_string(gn) + " exceeds cap " + std::to_string(cfg_.grad_norm_cap));
    ++t_;
    for (std::size_t k = 0; k < net.depth(); ++k) {
      auto& layer = net.layers()[k];
      update(layer.weights, g.weights[k], m_.weights[k], v_.weights[k], cfg_.lr_base);
      normalize_rows(layer.weights);
      if (layer.variational) {
        double rho = layer.noise.rho();
        update_scalar(rho, g.rho[k], m_.rho[k], v_.rho[k], cfg_.lr_noise);
        layer.noise.set_rho(rho);
      }
    }
    update(net.readout().weights, g.readout_weights, m_.readout_weights, v_.readout_weights, cfg_.lr_base);
    update(net.readout().bias, g.readout_bias, m_.readout_bias, v_.readout_bias, cfg_.lr_base);
    if (net.task() == Task::Regression) {
      double s = net.log_var();
      update_scalar(s, g.log_var, m_.log_var, v_.log_var, cfg_.lr_base);
      net.set_log_var(s);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  template <class P>
  void update(P& p, const P& g, P& m, P& v, double lr) const {
    if (cfg_.optimizer == OptimizerKind::SGD) {
      p -= lr * g;
      return;
    }
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
  }

  void update_scalar(double& p, double g, double& m, double& v, double lr) const {
    if (cfg_.optimizer == OptimizerKind::SGD) {
      p -= lr * g;
      return;
    }
    m = kBeta1 * m + (1.0 - kBeta1) * g;
    v = kBeta2 * v + (1.0 - kBeta2) * g * g;
    const double c1 = 1.0 - std::pow(kBeta1, t_);
    const double c2 = 1.0 - std::pow(kBeta2, t_);
    p -= lr * (m / c1) / (std::sqrt(v / c2) + kEps);
  }

  TrainConfig cfg_;
  Gradients m_, v_;
  long t_ = 0;
};

/// One stochastic step on `batch`: noisy forward with batch statistics,
/// exact gradient, optimizer update, running-statistic update.
inline ObjectiveValue backward_and_step(VarNet& net, Optimizer& opt, const Batch& batch, double beta,
                                        double kl_scale, Rng& rng) {
  ForwardOptions fo;
  fo.bn = BnMode::Train;
  fo.noise = NoiseMode::Sample;
  fo.rng = &rng;
  const ForwardResult fr = forward(net, batch.x, fo);
  ObjectiveValue value;
  const Gradients g = backward(net, fr, batch, beta, kl_scale, BnMode::Train, &value);
  opt.step(net, g);
  for (std::size_t k = 0; k < net.depth(); ++k)
    update_running_stats(net.layers()[k].bn, fr.layers[k].stats, batch.size());
  return value;
}

/// mc_samples = 0: deterministic pass (running statistics, no noise).
/// mc_samples = S >= 1: mean of S noisy passes with running statistics.
/// Returns class probabilities (classification) or mean predictions.
inline Eigen::MatrixXd predict(const VarNet& net, const Eigen::MatrixXd& x, int mc_samples, Rng* rng = nullptr) {
  detail::require_domain(mc_samples >= 0, "predict: mc_samples must be >= 0");
  auto to_pred = [&](const Eigen::MatrixXd& out) {
    return net.task() == Task::Classification ? softmax_columns(out) : out;
  };
  ForwardOptions fo;
  fo.bn = BnMode::Eval;
  if (mc_samples == 0) {
    fo.noise = NoiseMode::Off;
    return to_pred(forward(net, x, fo).output);
  }
  detail::require_domain(rng != nullptr, "predict: Monte-Carlo prediction needs an rng");
  fo.noise = NoiseMode::Sample;
  fo.rng = rng;
  Eigen::MatrixXd acc = to_pred(forward(net, x, fo).output);
  for (int s = 1; s < mc_samples; ++s) acc += to_pred(forward(net, x, fo).output);
  return acc / mc_samples;
}

struct EvalMetrics {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
};

struct TrainRecord {
  int epoch = 0;
  double beta = 0.0;
  double nll = 0.0;       ///< mean over the epoch's steps
  double kl_total = 0.0;  ///< mean over the epoch's steps
  double kl_scale = 1.0;
  double loss = 0.0;      ///< nll + beta * kl_scale * kl_total
  std::vector<double> sigma_eff;
  std::optional<EvalMetrics> eval;
};

struct Dataset {
  Eigen::MatrixXd x;  ///< features x examples
  std::vector<int> labels;
  Eigen::VectorXd targets;
  int classes = 0;

  Eigen::Index size() const noexcept { return x.cols(); }

  Batch gather(std::span<const Eigen::Index> idx) const {
    Batch b;
    b.x.resize(x.rows(), static_cast<Eigen::Index>(idx.size()));
    if (!labels.empty()) b.labels.resize(idx.size());
    if (targets.size()) b.targets.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      b.x.col(static_cast<Eigen::Index>(j)) = x.col(idx[j]);
      if (!labels.empty()) b.labels[j] = labels[static_cast<std::size_t>(idx[j])];
      if (targets.size()) b.targets(static_cast<Eigen::Index>(j)) = targets(idx[j]);
    }
    return b;
  }
};

}  // namespace sphevar
