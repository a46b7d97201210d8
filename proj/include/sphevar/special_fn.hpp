#pragma once

// Scalar special functions behind every vMF quantity: the Bessel ratio
// A_D(kappa) = I_{D/2}(kappa) / I_{D/2-1}(kappa), the unit-sphere area and the
// vMF log-normalizer. Nothing here evaluates I_nu itself, so there is no
// overflow for large kappa or large D.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "sphevar/error.hpp"

namespace sphevar {

enum class BesselRatioMethod { ContinuedFraction, SmallKappaSeries, LargeKappaAsymptotic };

inline const char* to_string(BesselRatioMethod m) {
  switch (m) {
    case BesselRatioMethod::ContinuedFraction: return "continued_fraction";
    case BesselRatioMethod::SmallKappaSeries: return "small_kappa_series";
    case BesselRatioMethod::LargeKappaAsymptotic: return "large_kappa_asymptotic";
  }
  return "unknown";
}

namespace special_fn_detail {

inline constexpr int kMaxContinuedFractionIterations = 500;
inline constexpr double kContinuedFractionTolerance = 1e-15;
inline constexpr double kSmallKappaRatio = 1e-3;
inline constexpr double kLargeKappaPerDim = 50.0;
inline constexpr double kLargeKappaPerDimSq = 8.0;

inline void check_args(int dim, double kappa) {
  detail::require_domain(dim >= 2, "dimension must be >= 2, got " + std::to_string(dim));
  detail::require_domain(std::isfinite(kappa), "kappa must be finite");
  detail::require_domain(kappa >= 0.0, "kappa must be >= 0");
}

// sum_k z^k / (k! (c)_k), the hypergeometric 0F1(; c; z) for z >= 0.
inline double hyp0f1(double c, double z) {
  double term = 1.0;
  double sum = 1.0;
  for (int k = 0; k < 200; ++k) {
    term *= z / ((k + 1.0) * (c + k));
    sum += term;
    if (term < 1e-18 * sum) break;
  }
  return sum;
}

// A_D(kappa) / kappa from the power series of I_nu; exact limit 1/D at 0.
inline double ratio_over_kappa_series(int dim, double kappa) {
  const double nu = 0.5 * dim;
  const double z = 0.25 * kappa * kappa;
  return hyp0f1(nu + 1.0, z) / (dim * hyp0f1(nu, z));
}

// Perron continued fraction
//   A = kappa / (D + kappa - (D+1)kappa / (D+1+2kappa - (D+3)kappa / (D+2+2kappa - ...)))
// evaluated with the modified Lentz algorithm.
inline double ratio_continued_fraction(int dim, double kappa) {
  constexpr double tiny = 1e-300;
  const double d = dim;
  double f = d + kappa;
  double c = f;
  double den = 0.0;
  for (int j = 1; j <= kMaxContinuedFractionIterations; ++j) {
    const double a = -(d + 2.0 * j - 1.0) * kappa;
    const double b = d + j + 2.0 * kappa;
    den = b + a * den;
    if (den == 0.0) den = tiny;
    c = b + a / c;
    if (c == 0.0) c = tiny;
    den = 1.0 / den;
    const double delta = c * den;
    f *= delta;
    if (std::abs(delta - 1.0) < kContinuedFractionTolerance) return kappa / f;
  }
  throw NumericalError("bessel_ratio: continued fraction did not converge in " +
                       std::to_string(kMaxContinuedFractionIterations) + " iterations (D=" +
                       std::to_string(dim) + ", kappa=" + std::to_string(kappa) + ")");
}

// Hankel expansion sum_k (-1)^k a_k(nu) / x^k of sqrt(2 pi x) e^{-x} I_nu(x),
// with mu = 4 nu^2. Summed until the terms stop shrinking or are negligible.
inline double hankel_series(double mu, double x) {
  double term = 1.0;
  double sum = 1.0;
  double prev = 1.0;
  for (int k = 1; k < 60; ++k) {
    const double odd = 2.0 * k - 1.0;
    term *= -(mu - odd * odd) / (8.0 * k * x);
    const double mag = std::abs(term);
    if (mag > prev) break;
    sum += term;
    if (mag < 1e-17 * std::abs(sum)) break;
    prev = mag;
  }
  return sum;
}

inline double ratio_large_kappa(int dim, double kappa) {
  const double d = dim;
  return hankel_series(d * d, kappa) / hankel_series((d - 2.0) * (d - 2.0), kappa);
}

}  // namespace special_fn_detail

/// Branch used by bessel_ratio for (dim, kappa). Pure function of its inputs.
inline BesselRatioMethod select_bessel_ratio_method(int dim, double kappa) {
  using namespace special_fn_detail;
  const double d = dim;
  if (kappa < kSmallKappaRatio * d) return BesselRatioMethod::SmallKappaSeries;
  if (kappa > kLargeKappaPerDim * d && kappa > kLargeKappaPerDimSq * d * d) {
    return BesselRatioMethod::LargeKappaAsymptotic;
  }
  return BesselRatioMethod::ContinuedFraction;
}

/// A_D(kappa) evaluated with a caller-chosen branch. Used by the branch
/// agreement tests; callers normally want bessel_ratio(dim, kappa).
inline double bessel_ratio(int dim, double kappa, BesselRatioMethod method) {
  special_fn_detail::check_args(dim, kappa);
  if (kappa == 0.0) return 0.0;
  switch (method) {
    case BesselRatioMethod::SmallKappaSeries:
      return kappa * special_fn_detail::ratio_over_kappa_series(dim, kappa);
    case BesselRatioMethod::LargeKappaAsymptotic:
      return special_fn_detail::ratio_large_kappa(dim, kappa);
    case BesselRatioMethod::ContinuedFraction:
      break;
  }
  return special_fn_detail::ratio_continued_fraction(dim, kappa);
}

/// Mean resultant length A_D(kappa) = I_{D/2}(kappa) / I_{D/2-1}(kappa).
/// Strictly increasing from A_D(0) = 0 towards 1.
inline double bessel_ratio(int dim, double kappa) {
  special_fn_detail::check_args(dim, kappa);
  return bessel_ratio(dim, kappa, select_bessel_ratio_method(dim, kappa));
}

/// A_D(kappa) / kappa, continuous at kappa = 0 where it equals 1/D.
inline double bessel_ratio_over_kappa(int dim, double kappa) {
  special_fn_detail::check_args(dim, kappa);
  if (select_bessel_ratio_method(dim, kappa) == BesselRatioMethod::SmallKappaSeries) {
    return special_fn_detail::ratio_over_kappa_series(dim, kappa);
  }
  return bessel_ratio(dim, kappa) / kappa;
}

/// log Area(S^{D-1}) = log(2 pi^{D/2} / Gamma(D/2)).
inline double log_sphere_area(int dim) {
  detail::require_domain(dim >= 2, "dimension must be >= 2, got " + std::to_string(dim));
  return std::log(2.0) + 0.5 * dim * std::log(std::numbers::pi) -
         boost::math::lgamma(0.5 * dim);
}

/// Integral of A_D over [0, kappa].
///
/// The integrand is analytic with its nearest singularities on the imaginary
/// axis (zeros of J_{D/2-1}), so Gauss-Legendre panels [0, h], [h, 2h],
/// [2h, 4h], ... with h ~ D/2 converge to machine precision.
inline double integrated_bessel_ratio(int dim, double kappa) {
  special_fn_detail::check_args(dim, kappa);
  if (kappa == 0.0) return 0.0;
  using Rule = boost::math::quadrature::gauss<double, 20>;
  auto integrand = [dim](double t) { return bessel_ratio(dim, t); };
  const double first = std::max(1.0, 0.5 * dim - 1.0);
  double lo = 0.0;
  double hi = std::min(kappa, first);
  double total = 0.0;
  while (true) {
    total += Rule::integrate(integrand, lo, hi);
    if (hi >= kappa) break;
    lo = hi;
    hi = std::min(kappa, 2.0 * hi);
  }
  return total;
}

/// log C_D(kappa) for the vMF density C_D(kappa) exp(kappa mu^T w) on S^{D-1}.
///
/// Uses d/dkappa log C_D(kappa) = -A_D(kappa), which follows from
/// C_D = kappa^{D/2-1} / ((2 pi)^{D/2} I_{D/2-1}(kappa)) and
/// I'_{nu} = I_{nu+1} + (nu/kappa) I_nu; hence
/// log C_D(kappa) = -log Area(S^{D-1}) - int_0^kappa A_D(t) dt.
inline double log_vmf_normalizer(int dim, double kappa) {
  special_fn_detail::check_args(dim, kappa);
  if (kappa == 0.0) return -log_sphere_area(dim);
  return -log_sphere_area(dim) - integrated_bessel_ratio(dim, kappa);
}

}  // namespace sphevar
