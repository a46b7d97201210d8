#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sphevar/error.hpp"
#include "sphevar/klvar.hpp"
#include "sphevar/special_fn.hpp"

namespace sphevar {

struct CalibrationBin {
  double mean_confidence = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  std::vector<CalibrationBin> bins;
};

/// Top-label calibration of class probabilities. `probabilities` holds one
/// example per column (K x N); columns must sum to 1 within 1e-6.
///
/// Confidence c = max_k p_k falls in equal-width bin floor(c * n_bins), with
/// the last bin closed at 1. ece = sum_b (count_b / N) |acc_b - conf_b|.
inline CalibrationReport ece(const Eigen::MatrixXd& probabilities, std::span<const int> labels,
                             int n_bins = 15) {
  const Eigen::Index n = probabilities.cols();
  const Eigen::Index k = probabilities.rows();
  detail::require_domain(n > 0 && k > 0, "ece: empty probability matrix");
  detail::require_domain(static_cast<std::size_t>(n) == labels.size(),
                         "ece: probabilities and labels differ in length");
  detail::require_domain(n_bins >= 1, "ece: n_bins must be >= 1");

  CalibrationReport report;
  report.bins.assign(static_cast<std::size_t>(n_bins), {});
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> correct_sum(n_bins, 0.0);
  double nll = 0.0;
  double correct = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto col = probabilities.col(j);
    detail::require_domain((col.array() >= 0.0).all() && std::abs(col.sum() - 1.0) <= 1e-6,
                           "ece: column is not a probability vector");
    const int label = labels[static_cast<std::size_t>(j)];
    detail::require_domain(label >= 0 && label < k, "ece: label out of range");
    Eigen::Index arg = 0;
    const double c = col.maxCoeff(&arg);
    const int bin = std::min(n_bins - 1, static_cast<int>(std::floor(c * n_bins)));
    const bool hit = arg == label;
    conf_sum[bin] += c;
    correct_sum[bin] += hit ? 1.0 : 0.0;
    report.bins[bin].count += 1;
    correct += hit ? 1.0 : 0.0;
    nll -= std::log(std::max(col(label), 1e-300));
  }
  const double total = static_cast<double>(n);
  for (int b = 0; b < n_bins; ++b) {
    auto& bin = report.bins[b];
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[b] / cnt;
    bin.accuracy = correct_sum[b] / cnt;
    report.ece += cnt / total * std::abs(bin.accuracy - bin.mean_confidence);
  }
  report.accuracy = correct / total;
  report.nll = nll / total;
  return report;
}

inline double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  detail::require_domain(a.size() == b.size(), "cosine_similarity: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  detail::require_domain(na > 0.0 && nb > 0.0, "cosine_similarity: zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// A_D(kappa_eff) with kappa_eff from the regime inversion of sigma_eff.
inline double inferred_mean_resultant(double sigma_eff, int dim) {
  return bessel_ratio(dim, kappa_from_sigma_eff(EffNoiseSpec(sigma_eff, dim)));
}

inline double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  detail::require_domain(x.size() == y.size() && x.size() >= 2, "pearson: need >= 2 pairs");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Average ranks (1-based), ties share the mean rank.
inline std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson_correlation(rx, ry);
}

inline double median(std::vector<double> v) {
  detail::require_domain(!v.empty(), "median of empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace sphevar
