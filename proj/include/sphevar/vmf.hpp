#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "sphevar/error.hpp"
#include "sphevar/rng.hpp"
#include "sphevar/special_fn.hpp"

namespace sphevar {

/// von Mises-Fisher distribution on S^{D-1}: density C_D(kappa) exp(kappa mu^T w).
/// Immutable after construction.
class VmfDistribution {
 public:
  static constexpr double kUnitTolerance = 1e-12;

  VmfDistribution(Eigen::VectorXd mean_direction, double kappa)
      : mu_(std::move(mean_direction)), kappa_(kappa) {
    detail::require_domain(mu_.size() >= 2, "vMF dimension must be >= 2");
    detail::require_domain(std::isfinite(kappa_) && kappa_ >= 0.0,
                           "vMF concentration must be finite and >= 0");
    detail::require_domain(std::abs(mu_.norm() - 1.0) <= kUnitTolerance,
                           "vMF mean direction must be unit-norm");
  }

  /// Normalizes `direction` before construction.
  static VmfDistribution from_direction(const Eigen::VectorXd& direction, double kappa) {
    const double n = direction.norm();
    detail::require_domain(n > 0.0 && std::isfinite(n), "direction must be nonzero");
    return VmfDistribution(direction / n, kappa);
  }

  /// Mean direction e_1 in R^dim.
  static VmfDistribution canonical(int dim, double kappa) {
    detail::require_domain(dim >= 2, "vMF dimension must be >= 2");
    return VmfDistribution(Eigen::VectorXd::Unit(dim, 0), kappa);
  }

  int dim() const noexcept { return static_cast<int>(mu_.size()); }
  double kappa() const noexcept { return kappa_; }
  const Eigen::VectorXd& mean_direction() const noexcept { return mu_; }

 private:
  Eigen::VectorXd mu_;
  double kappa_;
};

struct VmfMoments {
  double mean_resultant;  ///< A_D(kappa)
  double var_parallel;    ///< variance of mu^T w
  double var_perp;        ///< variance along any unit tangent direction
};

inline double log_density(const VmfDistribution& dist, const Eigen::VectorXd& w) {
  detail::require_domain(w.size() == dist.dim(), "log_density: dimension mismatch");
  detail::require_domain(std::abs(w.norm() - 1.0) <= 1e-9, "log_density: w must be unit-norm");
  return log_vmf_normalizer(dist.dim(), dist.kappa()) + dist.kappa() * dist.mean_direction().dot(w);
}

/// Covariance coefficients Cov(w) = var_parallel mu mu^T + var_perp (I - mu mu^T):
///   var_perp = A/kappa,  var_parallel = 1 - A^2 - (D-1) A/kappa = A'(kappa),
/// both 1/D at kappa = 0.
inline VmfMoments analytic_moments(const VmfDistribution& dist) {
  const int d = dist.dim();
  const double kappa = dist.kappa();
  if (kappa == 0.0) return {0.0, 1.0 / d, 1.0 / d};
  const double a = bessel_ratio(d, kappa);
  const double a_over_k = bessel_ratio_over_kappa(d, kappa);
  const double par = 1.0 - a * a - (d - 1.0) * a_over_k;
  return {a, std::max(par, 0.0), a_over_k};
}

namespace vmf_detail {

inline constexpr long kMaxRejections = 1'000'000;

// Component t = mu^T w and the stable value of 1 - t^2.
struct AxialDraw {
  double t;
  double one_minus_t_sq;
};

// Wood (1994) rejection sampler for the axial component. Every quantity that
// would cancel catastrophically for large kappa (1 - t, 1 - x0 t, t - x0) is
// expanded algebraically in terms of b and z.
class AxialSampler {
 public:
  AxialSampler(int dim, double kappa)
      : kappa_(kappa),
        dm1_(dim - 1.0),
        b_(dm1_ / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1_ * dm1_))),
        gamma_(0.5 * dm1_, 1.0) {}

  AxialDraw operator()(Rng& rng) {
    for (long attempt = 0; attempt < kMaxRejections; ++attempt) {
      const double g1 = gamma_(rng);
      const double g2 = gamma_(rng);
      const double z = g1 / (g1 + g2);
      const double den = 1.0 - (1.0 - b_) * z;
      const double u = uniform_(rng);
      const double log_accept = kappa_ * 2.0 * b_ * (1.0 - 2.0 * z) / ((1.0 + b_) * den) +
                                dm1_ * std::log((1.0 + b_) / (2.0 * den));
      if (log_accept >= std::log(u)) {
        const double t = (1.0 - (1.0 + b_) * z) / den;
        const double rest = 4.0 * b_ * z * (1.0 - z) / (den * den);
        return {t, rest};
      }
    }
    throw NumericalError("vMF sampler exceeded " + std::to_string(kMaxRejections) +
                         " rejections for one sample");
  }

 private:
  double kappa_;
  double dm1_;
  double b_;
  std::gamma_distribution<double> gamma_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// Orthogonal map sending e_1 to mu: a Householder reflection, composed with
// a sign flip when mu_1 > 0 so the reflector never has a small norm.
inline void map_from_canonical(const Eigen::VectorXd& mu, Eigen::Ref<Eigen::VectorXd> w) {
  const bool flip = mu(0) > 0.0;
  Eigen::VectorXd v = flip ? Eigen::VectorXd(mu) : Eigen::VectorXd(-mu);
  v(0) += 1.0;
  const double vv = v.squaredNorm();
  w -= (2.0 * v.dot(w) / vv) * v;
  if (flip) w = -w;
}

}  // namespace vmf_detail

/// Exact i.i.d. draws from vMF(mu, kappa); column j of the result is sample j.
inline Eigen::MatrixXd sample(const VmfDistribution& dist, Rng& rng, std::size_t n) {
  detail::require_domain(n >= 1, "sample: n must be >= 1");
  const int d = dist.dim();
  vmf_detail::AxialSampler axial(d, dist.kappa());
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd out(d, static_cast<Eigen::Index>(n));
  Eigen::VectorXd w(d);
  for (std::size_t j = 0; j < n; ++j) {
    const auto draw = axial(rng);
    double tangent_sq = 0.0;
    do {
      for (int i = 1; i < d; ++i) {
        w(i) = normal(rng);
      }
      tangent_sq = w.tail(d - 1).squaredNorm();
    } while (tangent_sq == 0.0);
    w.tail(d - 1) *= std::sqrt(draw.one_minus_t_sq / tangent_sq);
    w(0) = draw.t;
    vmf_detail::map_from_canonical(dist.mean_direction(), w);
    w /= w.norm();
    out.col(static_cast<Eigen::Index>(j)) = w;
  }
  return out;
}

enum class InputDistribution { Sphere, Gaussian };

/// Monte-Carlo estimate of the input-averaged activation variance of u = w^T x.
struct ActivationVarianceEstimate {
  double sigma_u_sq;
  double sigma_u_sq_se;
  double mean_resultant;     ///< sample mean of mu^T w
  double mean_resultant_se;  ///< its standard error
};

/// Draws `n_samples` directions w ~ vMF split into independent replicate
/// batches. Each batch gets its own `n_inputs` inputs (uniform on the sphere
/// of radius sqrt(D) by default); within a batch the unbiased variance of
/// w^T x over the batch's directions is averaged over inputs. The estimate is
/// the mean over batches and the standard error is their spread, so the
/// correlation induced by sharing directions across inputs is accounted for.
inline ActivationVarianceEstimate mc_activation_variance(
    const VmfDistribution& dist, Rng& rng, std::size_t n_samples, std::size_t n_inputs,
    InputDistribution inputs = InputDistribution::Sphere, std::size_t n_batches = 50) {
  detail::require_domain(n_samples >= 4, "mc_activation_variance: n_samples must be >= 4");
  detail::require_domain(n_inputs >= 1, "mc_activation_variance: n_inputs must be >= 1");
  const int d = dist.dim();
  const std::size_t batches = std::clamp<std::size_t>(n_batches, 2, n_samples / 2);
  std::normal_distribution<double> normal(0.0, 1.0);

  double sum_est = 0.0;
  double sum_est_sq = 0.0;
  double sum_t = 0.0;
  double sum_t_sq = 0.0;
  std::size_t drawn = 0;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t m = n_samples / batches + (b < n_samples % batches ? 1 : 0);
    const Eigen::MatrixXd w = sample(dist, rng, m);
    Eigen::MatrixXd x(d, static_cast<Eigen::Index>(n_inputs));
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      for (int i = 0; i < d; ++i) x(i, j) = normal(rng);
      if (inputs == InputDistribution::Sphere) x.col(j) *= std::sqrt(double(d)) / x.col(j).norm();
    }
    const Eigen::MatrixXd u = w.transpose() * x;  // m x n_inputs
    const Eigen::RowVectorXd mean = u.colwise().mean();
    const double var =
        (u.rowwise() - mean).colwise().squaredNorm().mean() / static_cast<double>(m - 1);
    sum_est += var;
    sum_est_sq += var * var;

    // Accumulate t - 1 so concentrated cases keep their tiny variance.
    const Eigen::VectorXd s = (w.transpose() * dist.mean_direction()).array() - 1.0;
    sum_t += s.sum();
    sum_t_sq += s.squaredNorm();
    drawn += m;
  }
  const double nb = static_cast<double>(batches);
  const double est = sum_est / nb;
  const double est_var = std::max(0.0, (sum_est_sq - nb * est * est) / (nb - 1.0));
  const double nt = static_cast<double>(drawn);
  const double t_mean = sum_t / nt;
  const double t_var = std::max(0.0, (sum_t_sq - nt * t_mean * t_mean) / (nt - 1.0));
  return {est, std::sqrt(est_var / nb), 1.0 + t_mean, std::sqrt(t_var / nt)};
}

}  // namespace sphevar
