#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sphevar/klvar.hpp"
#include "sphevar/metrics.hpp"
#include "sphevar/rng.hpp"
#include "sphevar/varnet.hpp"

namespace sphevar::experiments {

enum class SweepVariable { ObsNoise, Dim, NSamples };

inline std::string to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::ObsNoise: return "obs_noise";
    case SweepVariable::Dim: return "dim";
    case SweepVariable::NSamples: return "n_samples";
  }
  return "?";
}

inline SweepVariable sweep_variable_from_string(const std::string& s) {
  if (s == "obs_noise") return SweepVariable::ObsNoise;
  if (s == "dim") return SweepVariable::Dim;
  if (s == "n_samples") return SweepVariable::NSamples;
  throw ConfigError("unknown sweep variable '" + s + "' (expected obs_noise, dim or n_samples)");
}

struct SweepSpec {
  SweepVariable variable = SweepVariable::ObsNoise;
  std::vector<double> grid{0.05, 0.1, 0.2, 0.4, 0.8};
  int repeats = 5;
  double obs_noise = 0.1;
  int dim = 100;
  int n_samples = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (grid.empty()) throw ConfigError("sweep grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("sweep grid must be sorted");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (!(obs_noise >= 0.0)) throw ConfigError("obs_noise must be >= 0");
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (n_samples < 2) throw ConfigError("n_samples must be >= 2");
    for (double g : grid) {
      if (variable == SweepVariable::ObsNoise && !(g >= 0.0)) throw ConfigError("obs_noise grid values must be >= 0");
      if (variable != SweepVariable::ObsNoise && (g < 2 || g != std::floor(g)))
        throw ConfigError("dim / n_samples grid values must be integers >= 2");
    }
  }
};

struct StudentConfig {
  double beta = 1.0;
  int max_steps = 2000;
  int patience = 200;
  double tolerance = 1e-6;
  double lr = 1e-3;
  double lr_noise = 2e-2;
  double init_sigma_eff = 0.1;

  void validate() const {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0, 1]");
    if (max_steps < 1) throw ConfigError("steps must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (!(tolerance >= 0.0)) throw ConfigError("tolerance must be >= 0");
    if (!(lr > 0.0) || !(lr_noise > 0.0)) throw ConfigError("learning rates must be positive");
    if (!(init_sigma_eff > 0.0)) throw ConfigError("init sigma_eff must be positive");
  }
};

struct StudentResult {
  double sigma_eff = 0.0;
  double cosine = 0.0;
  double inferred_a = 0.0;
  double final_nll = 0.0;  ///< expected NLL over the noise at the final parameters
  int steps = 0;
  bool converged = false;  ///< plateau reached before max_steps
};

namespace st_detail {

struct Adam {
  double m = 0.0, v = 0.0;
  double step(double g, double lr, long t) {
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    return lr * (m / (1.0 - std::pow(0.9, t))) / (std::sqrt(v / (1.0 - std::pow(0.999, t))) + 1e-8);
  }
};

}  // namespace st_detail

/// Fits y ~ N(mu^T x + sigma eps, exp(s)) with |mu| = 1 by Adam on
///   mean NLL + beta * kl_approx(sigma, D) / N,
/// reparameterizing the noise with a fresh eps per example and step.
/// Examples are columns of x. Stops when the noise-averaged objective has not
/// improved by `tolerance` for `patience` steps.
inline StudentResult train_student(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& teacher,
                                   const StudentConfig& cfg, Rng& rng) {
  cfg.validate();
  const int d = static_cast<int>(x.rows());
  const double n = static_cast<double>(x.cols());
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd mu(d);
  for (int i = 0; i < d; ++i) mu(i) = normal(rng);
  mu.normalize();
  double rho = softplus_inverse(cfg.init_sigma_eff);
  double s = std::log(std::max(1e-12, (y.array() - y.mean()).square().mean()));
  Eigen::VectorXd m_mu = Eigen::VectorXd::Zero(d), v_mu = Eigen::VectorXd::Zero(d);
  st_detail::Adam opt_rho, opt_s;

  auto expected_objective = [&](double* nll_out) {
    const double sigma = softplus(rho);
    const double mse = (y - x.transpose() * mu).squaredNorm() / n;
    const double nll = 0.5 * (std::log(2.0 * std::numbers::pi) + s + std::exp(-s) * (mse + sigma * sigma));
    if (nll_out) *nll_out = nll;
    return nll + cfg.beta * kl_approx(EffNoiseSpec(sigma, d)) / n;
  };

  StudentResult res;
  double best = expected_objective(nullptr);
  int since_best = 0;
  Eigen::VectorXd eps(x.cols());
  for (long t = 1; t <= cfg.max_steps; ++t) {
    const double sigma = softplus(rho);
    for (Eigen::Index j = 0; j < eps.size(); ++j) eps(j) = normal(rng);
    const Eigen::VectorXd r = y - x.transpose() * mu - sigma * eps;
    const double inv_var = std::exp(-s);
    const Eigen::VectorXd g_mu = (-inv_var / n) * (x * r);
    const double g_sigma = (-inv_var / n) * r.dot(eps) + cfg.beta * kl_approx_grad(EffNoiseSpec(sigma, d)) / n;
    const double g_rho = g_sigma * sigmoid(rho);
    const double g_s = 0.5 * (1.0 - inv_var * r.squaredNorm() / n);
    if (!g_mu.allFinite() || !std::isfinite(g_rho) || !std::isfinite(g_s))
      throw NumericalError("student: non-finite gradient");

    m_mu = 0.9 * m_mu + 0.1 * g_mu;
    v_mu = 0.999 * v_mu + 0.001 * g_mu.cwiseProduct(g_mu);
    const double c1 = 1.0 - std::pow(0.9, t), c2 = 1.0 - std::pow(0.999, t);
    mu.array() -= cfg.lr * (m_mu.array() / c1) / ((v_mu.array() / c2).sqrt() + 1e-8);
    mu.normalize();
    rho -= opt_rho.step(g_rho, cfg.lr_noise, t);
    s -= opt_s.step(g_s, cfg.lr_noise, t);

    res.steps = static_cast<int>(t);
    const double obj = expected_objective(nullptr);
    if (obj < best - cfg.tolerance) {
      best = obj;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      res.converged = true;
      break;
    }
  }
  res.sigma_eff = softplus(rho);
  res.cosine = cosine_similarity(mu, teacher);
  res.inferred_a = inferred_mean_resultant(res.sigma_eff, d);
  expected_objective(&res.final_nll);
  return res;
}

struct CellResult {
  std::size_t cell = 0;
  double value = 0.0;  ///< value of the swept variable
  int repeat = 0;
  int dim = 0;
  int n_samples = 0;
  double obs_noise = 0.0;
  StudentResult result;
};

/// Every (cell, repeat) draws its own teacher, data and initialization from
/// a substream of `spec.seed`.
inline std::vector<CellResult> student_teacher(const SweepSpec& spec, const StudentConfig& cfg) {
  spec.validate();
  cfg.validate();
  std::vector<CellResult> out;
  for (std::size_t c = 0; c < spec.grid.size(); ++c) {
    for (int rep = 0; rep < spec.repeats; ++rep) {
      CellResult cell;
      cell.cell = c;
      cell.value = spec.grid[c];
      cell.repeat = rep;
      cell.dim = spec.variable == SweepVariable::Dim ? static_cast<int>(spec.grid[c]) : spec.dim;
      cell.n_samples = spec.variable == SweepVariable::NSamples ? static_cast<int>(spec.grid[c]) : spec.n_samples;
      cell.obs_noise = spec.variable == SweepVariable::ObsNoise ? spec.grid[c] : spec.obs_noise;

      Rng rng(derive_seed(derive_seed(spec.seed, c), static_cast<std::uint64_t>(rep)));
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::VectorXd teacher(cell.dim);
      for (int i = 0; i < cell.dim; ++i) teacher(i) = normal(rng);
      teacher.normalize();
      Eigen::MatrixXd x(cell.dim, cell.n_samples);
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) = normal(rng);
      Eigen::VectorXd y = x.transpose() * teacher;
      for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += cell.obs_noise * normal(rng);
      cell.result = train_student(x, y, teacher, cfg, rng);
      out.push_back(cell);
    }
  }
  return out;
}

struct TrendSummary {
  std::vector<double> grid;
  std::vector<double> median_sigma_eff;
  std::vector<double> median_cosine;
  std::vector<double> median_inferred_a;
  double spearman_sigma_eff = 0.0;
  double spearman_cosine = 0.0;
};

inline TrendSummary summarize_trend(const SweepSpec& spec, const std::vector<CellResult>& cells) {
  TrendSummary t;
  t.grid = spec.grid;
  for (std::size_t c = 0; c < spec.grid.size(); ++c) {
    std::vector<double> sig, cosv, inf;
    for (const auto& r : cells) {
      if (r.cell != c) continue;
      sig.push_back(r.result.sigma_eff);
      cosv.push_back(r.result.cosine);
      inf.push_back(r.result.inferred_a);
    }
    t.median_sigma_eff.push_back(median(sig));
    t.median_cosine.push_back(median(cosv));
    t.median_inferred_a.push_back(median(inf));
  }
  if (t.grid.size() >= 2) {
    t.spearman_sigma_eff = spearman_correlation(t.grid, t.median_sigma_eff);
    t.spearman_cosine = spearman_correlation(t.grid, t.median_cosine);
  }
  return t;
}

/// Direction of the sigma_eff trend expected for each sweep: +1 increasing.
inline int expected_sigma_trend(SweepVariable v) { return v == SweepVariable::NSamples ? -1 : +1; }

}  // namespace sphevar::experiments
