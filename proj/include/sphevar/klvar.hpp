#pragma once

// Scalar relations between the vMF concentration kappa, the activation
// variance sigma_u^2, the effective post-normalization noise sigma_eff and the
// KL divergence to the uniform distribution on the sphere.

#include <cmath>
#include <string>

#include "sphevar/error.hpp"
#include "sphevar/special_fn.hpp"

namespace sphevar {

/// Effective post-normalization noise std for a layer with input dimension D.
class EffNoiseSpec {
 public:
  EffNoiseSpec(double sigma_eff, int dim) : sigma_eff_(sigma_eff), dim_(dim) {
    detail::require_domain(std::isfinite(sigma_eff) && sigma_eff > 0.0,
                           "sigma_eff must be positive and finite");
    detail::require_domain(dim >= 2, "dimension must be >= 2, got " + std::to_string(dim));
  }
  double sigma_eff() const noexcept { return sigma_eff_; }
  int dim() const noexcept { return dim_; }

 private:
  double sigma_eff_;
  int dim_;
};

/// sigma_u^2(kappa) ~ D / (kappa + D).
inline double sigma_u_sq_interpolant(int dim, double kappa) {
  special_fn_detail::check_args(dim, kappa);
  return dim / (kappa + dim);
}

/// Input-averaged activation variance for ||x||^2 = D: 1 - A_D(kappa)^2.
inline double sigma_u_sq_exact(int dim, double kappa) {
  const double a = bessel_ratio(dim, kappa);
  return (1.0 - a) * (1.0 + a);
}

enum class SigmaNumerator { Interpolant, Exact };

/// sigma_eff(kappa) = sigma_u(kappa) / A_D(kappa). The default numerator is
/// the interpolant sqrt(D/(kappa+D)); `Exact` uses sqrt(1 - A^2).
inline double sigma_eff_from_kappa(int dim, double kappa,
                                   SigmaNumerator numerator = SigmaNumerator::Interpolant) {
  special_fn_detail::check_args(dim, kappa);
  if (kappa == 0.0) throw DomainError("sigma_eff_from_kappa: sigma_eff is infinite at kappa = 0");
  const double var = numerator == SigmaNumerator::Interpolant ? sigma_u_sq_interpolant(dim, kappa)
                                                              : sigma_u_sq_exact(dim, kappa);
  return std::sqrt(var) / bessel_ratio(dim, kappa);
}

/// Diagnostic regime inversion: D / sigma^2 for sigma <= 1 (tight cap),
/// D / sigma for sigma > 1 (broad cap). Both branches equal D at sigma = 1.
/// Asymptotic only; not an inverse of sigma_eff_from_kappa.
inline double kappa_from_sigma_eff(const EffNoiseSpec& spec) {
  const double s = spec.sigma_eff();
  const double d = spec.dim();
  return s <= 1.0 ? d / (s * s) : d / s;
}

/// KL(vMF(mu, kappa) || Uniform(S^{D-1})) = kappa A_D + log C_D + log Area.
///
/// Evaluated as kappa A_D(kappa) - int_0^kappa A_D, which is the same
/// expression after substituting log C_D = -log Area - int A_D; the log Area
/// terms cancel exactly, so KL(0) = 0 with no rounding residue.
inline double kl_exact(int dim, double kappa) {
  special_fn_detail::check_args(dim, kappa);
  if (kappa == 0.0) return 0.0;
  return kappa * bessel_ratio(dim, kappa) - integrated_bessel_ratio(dim, kappa);
}

/// Closed-form training KL: (D-1)/2 log(1 + D/(D-1) sigma^-2).
inline double kl_approx(const EffNoiseSpec& spec) {
  const double d = spec.dim();
  const double s = spec.sigma_eff();
  return 0.5 * (d - 1.0) * std::log1p(d / ((d - 1.0) * s * s));
}

/// d kl_approx / d sigma_eff = -D sigma^-3 / (1 + D/(D-1) sigma^-2); always < 0.
inline double kl_approx_grad(const EffNoiseSpec& spec) {
  const double d = spec.dim();
  const double s = spec.sigma_eff();
  // Multiplying through by sigma^3 keeps this finite for tiny and huge sigma.
  return -d / (s * s * s + d / (d - 1.0) * s);
}

}  // namespace sphevar
