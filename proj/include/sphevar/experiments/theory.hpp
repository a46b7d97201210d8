#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sphevar/klvar.hpp"
#include "sphevar/rng.hpp"
#include "sphevar/vmf.hpp"

namespace sphevar::experiments {

struct TheoryRow {
  double kappa = 0.0;
  double sigma_u_sq_mc = 0.0;
  double sigma_u_sq_mc_se = 0.0;
  double sigma_u_sq_exact = 0.0;
  double sigma_u_sq_interp = 0.0;
  double a_mc = 0.0;
  double a_mc_se = 0.0;
  double a_exact = 0.0;
  double sigma_eff = 0.0;  ///< sqrt(interpolant) / A; infinite at kappa = 0
  double kl_exact = 0.0;
  double kl_approx = 0.0;  ///< kl_approx(sigma_eff, D); 0 at kappa = 0
};

struct TheoryConfig {
  int dim = 100;
  std::vector<double> kappas;
  std::size_t mc_samples = 200000;
  std::size_t mc_inputs = 32;
  std::uint64_t seed = 0;
};

/// `steps` log-spaced values from kmin to kmax inclusive.
inline std::vector<double> log_spaced(double kmin, double kmax, int steps) {
  detail::require_domain(kmin > 0.0 && kmax >= kmin && steps >= 1, "log_spaced: need 0 < min <= max, steps >= 1");
  std::vector<double> g(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i)
    g[i] = steps == 1 ? kmin : std::exp(std::log(kmin) + (std::log(kmax) - std::log(kmin)) * i / (steps - 1));
  g.front() = kmin;
  g.back() = kmax;
  return g;
}

/// One row per kappa. Each kappa gets its own substream of `seed`.
inline std::vector<TheoryRow> theory_check(const TheoryConfig& cfg) {
  detail::require_domain(cfg.dim >= 2, "theory_check: dim must be >= 2");
  detail::require_domain(!cfg.kappas.empty(), "theory_check: empty kappa grid");
  std::vector<TheoryRow> rows;
  for (std::size_t i = 0; i < cfg.kappas.size(); ++i) {
    const double k = cfg.kappas[i];
    Rng rng = make_stream(cfg.seed, i);
    const auto est = mc_activation_variance(VmfDistribution::canonical(cfg.dim, k), rng, cfg.mc_samples, cfg.mc_inputs);
    TheoryRow r;
    r.kappa = k;
    r.sigma_u_sq_mc = est.sigma_u_sq;
    r.sigma_u_sq_mc_se = est.sigma_u_sq_se;
    r.a_mc = est.mean_resultant;
    r.a_mc_se = est.mean_resultant_se;
    r.sigma_u_sq_exact = sigma_u_sq_exact(cfg.dim, k);
    r.sigma_u_sq_interp = sigma_u_sq_interpolant(cfg.dim, k);
    r.a_exact = bessel_ratio(cfg.dim, k);
    r.kl_exact = kl_exact(cfg.dim, k);
    if (k == 0.0) {
      r.sigma_eff = INFINITY;
      r.kl_approx = 0.0;
    } else {
      r.sigma_eff = sigma_eff_from_kappa(cfg.dim, k);
      r.kl_approx = kl_approx(EffNoiseSpec(r.sigma_eff, cfg.dim));
    }
    rows.push_back(r);
  }
  return rows;
}

struct TheoryTolerances {
  double mc_se = 4.0;
  double interp_rel = 0.05;
  double kl_rel = 0.10;
  double kl_kappa_lo_over_dim = 0.1;
  double kl_kappa_hi_over_dim = 100.0;
};

struct TheorySummary {
  double max_sigma_u_sq_z = 0.0;  ///< max |mc - exact| / se
  double max_a_z = 0.0;
  double max_interp_rel = 0.0;
  double max_kl_rel = 0.0;  ///< over kappa in [lo D, hi D]
  double max_sigma_eff_consistency = 0.0;
  bool mc_pass = false;
  bool a_pass = false;
  bool interp_pass = false;
  bool kl_pass = false;
  bool consistency_pass = false;
};

inline double z_score(double mc, double exact, double se) {
  const double diff = std::abs(mc - exact);
  if (se > 0.0) return diff / se;
  return diff == 0.0 ? 0.0 : INFINITY;
}

inline TheorySummary summarize(const std::vector<TheoryRow>& rows, int dim, const TheoryTolerances& tol = {}) {
  TheorySummary s;
  for (const auto& r : rows) {
    s.max_sigma_u_sq_z = std::max(s.max_sigma_u_sq_z, z_score(r.sigma_u_sq_mc, r.sigma_u_sq_exact, r.sigma_u_sq_mc_se));
    s.max_a_z = std::max(s.max_a_z, z_score(r.a_mc, r.a_exact, r.a_mc_se));
    s.max_interp_rel = std::max(s.max_interp_rel, std::abs(r.sigma_u_sq_interp - r.sigma_u_sq_exact) / r.sigma_u_sq_exact);
    if (r.kappa >= tol.kl_kappa_lo_over_dim * dim && r.kappa <= tol.kl_kappa_hi_over_dim * dim)
      s.max_kl_rel = std::max(s.max_kl_rel, std::abs(r.kl_approx - r.kl_exact) / r.kl_exact);
    if (r.kappa > 0.0) {
      const double want = std::sqrt(r.sigma_u_sq_interp) / r.a_exact;
      s.max_sigma_eff_consistency = std::max(s.max_sigma_eff_consistency, std::abs(r.sigma_eff - want) / want);
    }
  }
  s.mc_pass = s.max_sigma_u_sq_z <= tol.mc_se;
  s.a_pass = s.max_a_z <= tol.mc_se;
  s.interp_pass = s.max_interp_rel <= tol.interp_rel;
  s.kl_pass = s.max_kl_rel <= tol.kl_rel;
  s.consistency_pass = s.max_sigma_eff_consistency <= 1e-12;
  return s;
}

}  // namespace sphevar::experiments
