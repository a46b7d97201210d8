#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sphevar/klvar.hpp"
#include "sphevar/metrics.hpp"
#include "sphevar/rng.hpp"
#include "sphevar/varnet.hpp"

namespace sphevar::experiments {

enum class LandscapeMode { OneD, TwoD };

inline std::string to_string(LandscapeMode m) { return m == LandscapeMode::OneD ? "1d" : "2d"; }

inline LandscapeMode landscape_mode_from_string(const std::string& s) {
  if (s == "1d") return LandscapeMode::OneD;
  if (s == "2d") return LandscapeMode::TwoD;
  throw ConfigError("unknown landscape mode '" + s + "' (expected 1d or 2d)");
}

struct Axis {
  double min = -1.5;
  double max = 1.5;
  int steps = 51;

  double at(int i) const { return steps == 1 ? min : min + (max - min) * i / (steps - 1); }
  double spacing() const { return steps == 1 ? 0.0 : (max - min) / (steps - 1); }
};

/// In 1D the axes are (x, y) of w' = y w_hat + x r_hat; in 2D they are
/// (a, b) of w' = w_hat + a r1 + b r2.
struct LandscapeConfig {
  LandscapeMode mode = LandscapeMode::TwoD;
  std::size_t layer = 0;
  Axis a{-1.5, 1.5, 51};
  Axis b{-1.5, 1.5, 51};
  std::optional<double> kappa;  ///< default: kappa_from_sigma_eff of the layer
  std::uint64_t seed = 0;

  static LandscapeConfig defaults(LandscapeMode mode, int steps = 51) {
    LandscapeConfig c;
    c.mode = mode;
    c.a = {-1.5, 1.5, steps};
    c.b = mode == LandscapeMode::OneD ? Axis{0.0, 1.5, steps} : Axis{-1.5, 1.5, steps};
    return c;
  }

  void validate() const {
    if (a.steps < 1 || b.steps < 1) throw ConfigError("landscape steps must be >= 1");
    if (!(a.max >= a.min) || !(b.max >= b.min)) throw ConfigError("landscape axis max must be >= min");
    if (kappa && !(*kappa >= 0.0 && std::isfinite(*kappa))) throw ConfigError("kappa must be finite and >= 0");
  }
};

struct LandscapeGrid {
  LandscapeMode mode = LandscapeMode::TwoD;
  Axis a, b;
  std::size_t layer = 0;
  std::vector<Eigen::VectorXd> basis;  ///< r_hat (1D) or r1, r2 (2D), flattened row-major
  Eigen::MatrixXd values;              ///< a.steps x b.steps
};

struct LandscapeResult {
  LandscapeGrid empirical;  ///< training NLL on the fixed batch
  LandscapeGrid analytic;   ///< kappa (1 - cos theta)
  double kappa = 0.0;
  double base_loss = 0.0;
};

namespace landscape_detail {

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& w) {
  Eigen::VectorXd v(w.size());
  for (Eigen::Index i = 0; i < w.rows(); ++i) v.segment(i * w.cols(), w.cols()) = w.row(i).transpose();
  return v;
}

// Nonzero rows are scaled to unit norm; a zero row stays zero.
inline void write_probe(VarNet& net, std::size_t layer, const Eigen::VectorXd& flat) {
  auto& w = net.layers()[layer].weights;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    const Eigen::VectorXd row = flat.segment(i * w.cols(), w.cols());
    const double n = row.norm();
    if (n > 0.0)
      w.row(i) = (row / n).transpose();
    else
      w.row(i).setZero();
  }
}

inline Eigen::VectorXd random_orthonormal(const std::vector<Eigen::VectorXd>& against, Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd r(n);
  for (Eigen::Index i = 0; i < n; ++i) r(i) = normal(rng);
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& v : against) r -= v.dot(r) * v;
  return r.normalized();
}

}  // namespace landscape_detail

/// Shared by the empirical grid and the consistency check: NLL with batch
/// statistics and no noise.
inline double probe_loss(const VarNet& net, const Batch& batch) {
  ForwardOptions fo;
  fo.bn = BnMode::Train;
  fo.noise = NoiseMode::Off;
  return mean_nll(net, forward(net, batch.x, fo).output, batch);
}

/// cos of the angle between a flattened perturbation and w_hat (0 for the zero vector).
inline double probe_cosine(LandscapeMode mode, double a, double b) {
  if (mode == LandscapeMode::TwoD) return 1.0 / std::sqrt(1.0 + a * a + b * b);
  const double r = std::hypot(a, b);
  return r > 0.0 ? b / r : 0.0;
}

inline LandscapeResult landscape_probe(const VarNet& net, const Batch& batch, const LandscapeConfig& cfg) {
  cfg.validate();
  if (cfg.layer >= net.depth()) throw ConfigError("landscape: layer " + std::to_string(cfg.layer) + " does not exist");
  const auto& layer = net.layers()[cfg.layer];
  LandscapeResult res;
  if (cfg.kappa) {
    res.kappa = *cfg.kappa;
  } else {
    if (!layer.variational) throw ConfigError("landscape: layer has no sigma_eff; pass kappa explicitly");
    res.kappa = kappa_from_sigma_eff(EffNoiseSpec(layer.noise.sigma_eff(), layer.in_dim()));
  }

  const Eigen::VectorXd w_hat = landscape_detail::flatten(layer.weights).normalized();
  Rng rng = make_stream(cfg.seed, 0x1a5d);
  std::vector<Eigen::VectorXd> basis;
  std::vector<Eigen::VectorXd> against{w_hat};
  const int n_dirs = cfg.mode == LandscapeMode::OneD ? 1 : 2;
  for (int k = 0; k < n_dirs; ++k) {
    basis.push_back(landscape_detail::random_orthonormal(against, w_hat.size(), rng));
    against.push_back(basis.back());
  }
  for (const auto& r : basis) {
    if (std::abs(r.dot(w_hat)) > 1e-8 || std::abs(r.norm() - 1.0) > 1e-8)
      throw NumericalError("landscape basis is not orthonormal to w_hat");
  }
  if (n_dirs == 2 && std::abs(basis[0].dot(basis[1])) > 1e-8) throw NumericalError("landscape basis not orthogonal");

  for (LandscapeGrid* g : {&res.empirical, &res.analytic}) {
    g->mode = cfg.mode;
    g->a = cfg.a;
    g->b = cfg.b;
    g->layer = cfg.layer;
    g->basis = basis;
    g->values.resize(cfg.a.steps, cfg.b.steps);
  }

  res.base_loss = probe_loss(net, batch);
  VarNet probe = net;
  auto perturbed = [&](double a, double b) -> Eigen::VectorXd {
    return cfg.mode == LandscapeMode::OneD ? Eigen::VectorXd(b * w_hat + a * basis[0])
                                           : Eigen::VectorXd(w_hat + a * basis[0] + b * basis[1]);
  };
  // The unmodified direction must reproduce the unperturbed loss.
  landscape_detail::write_probe(probe, cfg.layer, cfg.mode == LandscapeMode::OneD ? perturbed(0.0, 1.0) : perturbed(0.0, 0.0));
  const double center = probe_loss(probe, batch);
  if (std::abs(center - res.base_loss) > 1e-10 * std::max(1.0, std::abs(res.base_loss)))
    throw NumericalError("landscape: unperturbed coordinate does not reproduce the base loss");

  for (int i = 0; i < cfg.a.steps; ++i) {
    for (int j = 0; j < cfg.b.steps; ++j) {
      const double a = cfg.a.at(i), b = cfg.b.at(j);
      landscape_detail::write_probe(probe, cfg.layer, perturbed(a, b));
      res.empirical.values(i, j) = probe_loss(probe, batch);
      res.analytic.values(i, j) = res.kappa * (1.0 - probe_cosine(cfg.mode, a, b));
    }
  }
  return res;
}

/// Fixed evaluation batch: `size` examples of a seeded permutation.
inline Batch probe_batch(const Dataset& data, int size, std::uint64_t seed) {
  if (size < 2) throw ConfigError("landscape batch size must be >= 2");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(data.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng = make_stream(seed, 0xba7c);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(size)));
  return data.gather(idx);
}

struct LandscapeSummary {
  double pearson = 0.0;      ///< empirical vs analytic grid
  double fitted_scale = 0.0;  ///< least-squares c in empirical - base ~ c * analytic
  double min_value = 0.0;
  std::vector<std::pair<double, double>> argmin;  ///< coordinates within fp tolerance of the minimum
  double radial_r2 = 0.0;  ///< share of empirical variance explained by radius (2D)
};

inline LandscapeSummary summarize(const LandscapeResult& r) {
  LandscapeSummary s;
  const auto& e = r.empirical.values;
  const auto& an = r.analytic.values;
  std::vector<double> ev(e.data(), e.data() + e.size()), av(an.data(), an.data() + an.size());
  s.pearson = pearson_correlation(ev, av);
  const double denom = an.squaredNorm();
  s.fitted_scale = denom > 0.0 ? ((e.array() - r.base_loss) * an.array()).sum() / denom : 0.0;
  s.min_value = e.minCoeff();
  const double tol = 1e-9 * std::max(1.0, std::abs(s.min_value));
  for (int i = 0; i < e.rows(); ++i)
    for (int j = 0; j < e.cols(); ++j)
      if (e(i, j) <= s.min_value + tol) s.argmin.emplace_back(r.empirical.a.at(i), r.empirical.b.at(j));
  if (r.empirical.mode == LandscapeMode::TwoD) {
    const int bins = std::max<int>(2, static_cast<int>(std::max(e.rows(), e.cols()) / 2));
    double rmax = 0.0;
    for (int i = 0; i < e.rows(); ++i)
      for (int j = 0; j < e.cols(); ++j) rmax = std::max(rmax, std::hypot(r.empirical.a.at(i), r.empirical.b.at(j)));
    std::vector<double> sum(bins, 0.0), sq(bins, 0.0);
    std::vector<int> cnt(bins, 0);
    for (int i = 0; i < e.rows(); ++i)
      for (int j = 0; j < e.cols(); ++j) {
        const double rad = std::hypot(r.empirical.a.at(i), r.empirical.b.at(j));
        const int k = std::min(bins - 1, static_cast<int>(rad / (rmax > 0 ? rmax : 1.0) * bins));
        sum[k] += e(i, j);
        sq[k] += e(i, j) * e(i, j);
        ++cnt[k];
      }
    const double mean = e.mean();
    const double total = (e.array() - mean).square().sum();
    double within = 0.0;
    for (int k = 0; k < bins; ++k)
      if (cnt[k]) within += sq[k] - sum[k] * sum[k] / cnt[k];
    s.radial_r2 = total > 0.0 ? 1.0 - within / total : 1.0;
  }
  return s;
}

/// 1D check: every minimizing coordinate lies within one cell of x = 0 and at
/// least one lies within one cell of y = 1 (the loss is flat in y along x = 0).
inline bool minimum_near_center(const LandscapeSummary& s, const LandscapeGrid& g) {
  if (g.mode != LandscapeMode::OneD || s.argmin.empty()) return false;
  const double dx = g.a.spacing() * (1.0 + 1e-9), dy = g.b.spacing() * (1.0 + 1e-9);
  bool near_y = false;
  for (const auto& [x, y] : s.argmin) {
    if (std::abs(x) > dx) return false;
    near_y = near_y || std::abs(y - 1.0) <= dy;
  }
  return near_y;
}

}  // namespace sphevar::experiments
