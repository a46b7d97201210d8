// acceptance <criterion> [--work DIR] [--cli PATH]
//
// Prints one "[PASS]" or "[FAIL]" line per check and exits non-zero when any
// check of the requested criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>

#include "sphevar/cli.hpp"
#include "sphevar/experiments.hpp"
#include "sphevar/klvar.hpp"
#include "sphevar/special_fn.hpp"
#include "sphevar/varnet.hpp"
#include "support/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace sphevar;
using namespace sphevar::experiments;

namespace {

struct Report {
  bool ok = true;
  void check(bool pass, const std::string& id, const std::string& what) {
    ok = ok && pass;
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << id << " " << what << std::endl;
  }
  void note(const std::string& id, const std::string& what) { std::cout << "[INFO] " << id << " " << what << std::endl; }
};

std::string num(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

std::vector<double> log_grid(double lo, double hi, int n) { return log_spaced(lo, hi, n); }

struct Options {
  fs::path work = "acceptance-work";
  std::string cli;
  std::string checks = "all";
};

// ---- 1 ---------------------------------------------------------------------

void special_functions(Report& r, const Options&) {
  using Big = boost::multiprecision::cpp_bin_float_50;
  double worst = 0.0;
  for (double k : log_grid(1e-3, 1e3, 601)) {
    const Big kb(k);
    const double want = static_cast<double>(1 / boost::multiprecision::tanh(kb) - 1 / kb);
    worst = std::max(worst, std::abs(bessel_ratio(3, k) - want) / want);
  }
  r.check(worst <= 1e-10, "1a", "D=3 closed form coth(k) - 1/k over [1e-3, 1e3]: max rel " + num(worst) +
                                    " (tol 1e-10)");

  // Residual after two terms, scaled by k^5, against the next series coefficient.
  double worst_small = 0.0;
  for (int d : {3, 10, 100}) {
    const double dd = d;
    const double c5 = 2.0 / (dd * dd * dd * (dd + 2) * (dd + 4));
    for (double k : {0.05 * dd, 0.02 * dd}) {
      const double two_term = k / dd - k * k * k / (dd * dd * (dd + 2));
      const double scaled = (bessel_ratio(d, k) - two_term) / std::pow(k, 5);
      worst_small = std::max(worst_small, std::abs(scaled / c5 - 1.0));
    }
  }
  r.check(worst_small <= 0.05, "1b",
          "small-k expansion k/D - k^3/(D^2 (D+2)) + O(k^5): residual/k^5 within " + num(worst_small) +
              " of its limit (tol 0.05)");
  {
    const double d = 10.0, k = 0.2;
    const double printed = k / d - k * k * k / (d * (d + 2));
    r.note("1b", "the form k^3/(D (D+2)) leaves residual/k^3 = " +
                     num((bessel_ratio(10, k) - printed) / (k * k * k)) + " at D=10 (an O(k^3) error)");
  }

  // Residual after three terms, scaled by k^3, against (D-1)(D-3)/8.
  double worst_large = 0.0;
  for (int d : {5, 10, 20}) {
    const double dd = d;
    const double c3 = (dd - 1) * (dd - 3) / 8;
    for (double k : {200.0 * dd * dd, 500.0 * dd * dd}) {
      const double three = 1 - (dd - 1) / (2 * k) + (dd - 1) * (dd - 3) / (8 * k * k);
      const double scaled = (bessel_ratio(d, k) - three) * k * k * k;
      worst_large = std::max(worst_large, std::abs(scaled / c3 - 1.0));
    }
  }
  r.check(worst_large <= 0.05, "1c",
          "large-k expansion 1 - (D-1)/(2k) + (D-1)(D-3)/(8k^2) + O(k^-3): residual*k^3 within " + num(worst_large) +
              " of its limit (tol 0.05)");
}

// ---- 2 ---------------------------------------------------------------------

void kl_asymptotics(Report& r, const Options&) {
  double worst = 0.0;
  for (int d : {2, 3, 10, 100, 1000}) worst = std::max(worst, std::abs(kl_exact(d, 0.0)));
  r.check(worst <= 1e-9, "2a", "kl_exact(D, 0) for D in {2,3,10,100,1000}: max |KL| " + num(worst) + " (tol 1e-9)");

  const int d = 100;
  const auto ks = log_grid(1e3 * d, 1e5 * d, 41);
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (double k : ks) {
    const double x = std::log(k), y = kl_exact(d, k);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(ks.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double rel = std::abs(slope - (d - 1) / 2.0) / ((d - 1) / 2.0);
  r.check(rel <= 0.02, "2b", "D=100 slope of kl_exact vs log k over [1e3 D, 1e5 D]: " + num(slope, 6) +
                                 " vs 49.5, rel " + num(rel) + " (tol 0.02)");
}

// ---- 3 ---------------------------------------------------------------------

std::vector<double> theory_grid() {
  std::vector<double> k{0.0};
  for (double v : log_grid(0.1, 1e6, 31)) k.push_back(v);
  return k;
}

void theory(Report& r, const Options& opt) {
  const int d = 100;
  const auto ks = theory_grid();
  const TheoryTolerances tol;
  const auto want = [&](const char* c) { return opt.checks == "all" || opt.checks == c; };
  if (want("a")) {
    TheoryConfig cfg;
    cfg.dim = d;
    cfg.kappas = ks;
    cfg.mc_samples = 200000;
    cfg.seed = 0;
    const auto rows = theory_check(cfg);
    const auto s = summarize(rows, d, tol);
    r.check(s.mc_pass, "3a",
            "MC sigma_u^2 vs 1 - A^2 at " + std::to_string(rows.size()) + " kappas (2e5 samples): max z " +
                num(s.max_sigma_u_sq_z) + " (tol 4 SE)");
  }
  if (want("b")) {
    double worst = 0.0, at = 0.0;
    for (double k : ks) {
      const double rel = std::abs(sigma_u_sq_interpolant(d, k) - sigma_u_sq_exact(d, k)) / sigma_u_sq_exact(d, k);
      if (rel > worst) worst = rel, at = k;
    }
    r.check(worst <= tol.interp_rel, "3b",
            "interpolant D/(k+D) vs 1 - A^2: max rel " + num(worst) + " at k=" + num(at) + " (tol 0.05)");
  }
  if (want("c")) {
    double worst = 0.0, at = 0.0;
    for (double k : ks) {
      if (k < 0.1 * d || k > 100.0 * d) continue;
      const double approx = kl_approx(EffNoiseSpec(sigma_eff_from_kappa(d, k), d));
      const double rel = std::abs(approx - kl_exact(d, k)) / kl_exact(d, k);
      if (rel > worst) worst = rel, at = k;
    }
    r.check(worst <= tol.kl_rel, "3c",
            "kl_approx vs kl_exact on [D/10, 100D]: max rel " + num(worst) + " at k=" + num(at) + " (tol 0.10)");
  }
}

// ---- 4 ---------------------------------------------------------------------

void gradients(Report& r, const Options&) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto toy = check::make_toy_problem(seed, Task::Classification);
    const auto g = check::gradient_check(toy.net, toy.batch, 1.0, 1.0, toy.eps);
    r.check(g.pass_fraction() >= 0.99, "4." + std::to_string(seed),
            "toy network seed " + std::to_string(seed) + ": " + std::to_string(g.passed) + "/" +
                std::to_string(g.total) + " parameters within 1e-4 rel (worst " + num(g.worst_rel) + ", need 99%)");
  }
}

// ---- 5 ---------------------------------------------------------------------

void scale_invariance(Report& r, const Options&) {
  Rng rng(7);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd u(6, 64);
  for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = 3.0 * normal(rng) + 0.5;

  double bn_dev = 0.0, bn_dev_default = 0.0;
  for (double alpha : {0.1, 1.0, 10.0}) {
    BatchNormState exact(6, 0.1, 1e-12), def(6, 0.1, 1e-5);
    const Eigen::MatrixXd a = batchnorm_forward(u, exact, BnMode::Train);
    const Eigen::MatrixXd b = batchnorm_forward(alpha * u, exact, BnMode::Train);
    bn_dev = std::max(bn_dev, (a - b).cwiseAbs().maxCoeff());
    bn_dev_default = std::max(bn_dev_default, (batchnorm_forward(u, def, BnMode::Train) -
                                               batchnorm_forward(alpha * u, def, BnMode::Train))
                                                  .cwiseAbs()
                                                  .maxCoeff());
  }
  r.check(bn_dev <= 1e-6, "5a", "BN(alpha u) = BN(u), alpha in {0.1, 1, 10}: max dev " + num(bn_dev) + " (tol 1e-6)");
  r.note("5a", "with epsilon 1e-5 the deviation is " + num(bn_dev_default));

  NetworkSpec spec;
  spec.input_dim = 9;
  spec.hidden = {7, 6};
  spec.outputs = 4;
  spec.bn_epsilon = 1e-12;
  Rng init(11);
  const VarNet net = VarNet::init(spec, init);
  Eigen::MatrixXd x(9, 32);
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = normal(rng);
  ForwardOptions fo;
  fo.bn = BnMode::Train;
  fo.noise = NoiseMode::Off;
  const Eigen::MatrixXd base = forward(net, x, fo).output;
  double raw = 0.0, renorm = 0.0;
  for (double alpha : {0.1, 1.0, 10.0}) {
    for (std::size_t l = 0; l < net.depth(); ++l) {
      VarNet scaled = net;
      scaled.layers()[l].weights *= alpha;
      raw = std::max(raw, (forward(scaled, x, fo).output - base).cwiseAbs().maxCoeff());
      VarNet reset = net;
      reset.set_layer_weights(l, alpha * net.layers()[l].weights);
      renorm = std::max(renorm, (forward(reset, x, fo).output - base).cwiseAbs().maxCoeff());
    }
  }
  r.check(raw <= 1e-6, "5b", "network output under per-layer weight scaling: max dev " + num(raw) + " (tol 1e-6)");
  r.check(renorm <= 1e-6, "5c",
          "network output after set_layer_weights(alpha W): max dev " + num(renorm) + " (tol 1e-6)");
}

// ---- 6 ---------------------------------------------------------------------

void student_teacher_trends(Report& r, const Options&) {
  struct Sweep {
    SweepVariable v;
    std::vector<double> grid;
  };
  const Sweep sweeps[] = {{SweepVariable::ObsNoise, {0.05, 0.1, 0.2, 0.4, 0.8}},
                          {SweepVariable::Dim, {20, 50, 100, 200}},
                          {SweepVariable::NSamples, {100, 300, 1000, 3000}}};
  for (const auto& s : sweeps) {
    SweepSpec spec;
    spec.variable = s.v;
    spec.grid = s.grid;
    spec.repeats = 5;
    spec.seed = 0;
    const auto t = summarize_trend(spec, student_teacher(spec, StudentConfig{}));
    const int sign = expected_sigma_trend(s.v);
    std::string medians;
    for (double m : t.median_sigma_eff) medians += (medians.empty() ? "" : " ") + num(m, 3);
    r.check(t.spearman_sigma_eff * sign >= 0.8, "6." + to_string(s.v),
            "spearman(" + to_string(s.v) + ", median sigma_eff) = " + num(t.spearman_sigma_eff) +
                ", expected sign " + (sign > 0 ? "+" : "-") + " with |rho| >= 0.8; medians " + medians);
    if (s.v == SweepVariable::NSamples)
      r.note("6." + to_string(s.v), "spearman(n_samples, median cosine) = " + num(t.spearman_cosine));
  }
}

// ---- 7 ---------------------------------------------------------------------

DatasetRecipe recipe_for(std::uint64_t seed) {
  DatasetRecipe r;
  r.synthetic.seed = seed;
  return r;
}

fs::path checkpoint_path(const Options& opt) { return opt.work / "classifier_seed0" / "checkpoint.json"; }

void calibration(Report& r, const Options& opt) {
  std::vector<double> ece_m, ece_b, acc_m, acc_b, ece_mc;
  bool trajectories = true;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto recipe = recipe_for(seed);
    const auto data = load_dataset(recipe);
    const auto method = default_method_config(seed);
    const auto cmp = classifier_study(data, method, baseline_of(method));
    ece_m.push_back(cmp.method.deterministic.ece);
    ece_b.push_back(cmp.baseline.deterministic.ece);
    acc_m.push_back(cmp.method.deterministic.accuracy);
    acc_b.push_back(cmp.baseline.deterministic.accuracy);
    ece_mc.push_back(cmp.method.monte_carlo.ece);
    for (const auto& rec : cmp.method.records)
      for (double s : rec.sigma_eff) trajectories = trajectories && std::isfinite(s) && s > 1e-3 && s < 1e3;
    if (seed == 0) save_checkpoint(checkpoint_path(opt), cli::make_checkpoint(cmp.method, method, recipe));
    std::string sig;
    for (double s : cmp.method.net.sigma_eff()) sig += " " + num(s, 3);
    r.note("7.seed" + std::to_string(seed),
           "method acc " + num(acc_m.back()) + " ECE " + num(ece_m.back()) + " (MC " + num(ece_mc.back()) +
               "), baseline acc " + num(acc_b.back()) + " ECE " + num(ece_b.back()) + ", sigma_eff" + sig + ", " +
               num(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 3) + " s");
  }
  const double me = median(ece_m), be = median(ece_b), ma = median(acc_m), ba = median(acc_b);
  r.check(me <= be, "7a", "median ECE over 5 seeds: method " + num(me) + " <= baseline " + num(be));
  r.check(ma >= ba - 0.02, "7b", "median accuracy: method " + num(ma) + " >= baseline " + num(ba) + " - 0.02");
  r.check(trajectories, "7c", "sigma_eff trajectories finite and within (1e-3, 1e3) for every layer and epoch");
  r.note("7", "median MC (S=8) ECE of the method " + num(median(ece_mc)));
}

// ---- 8 ---------------------------------------------------------------------

void landscape(Report& r, const Options& opt) {
  const fs::path path = checkpoint_path(opt);
  Checkpoint cp;
  if (fs::exists(path)) {
    cp = load_checkpoint(path);
  } else {
    r.note("8", "no checkpoint from criterion 7 at " + path.string() + "; retraining seed 0");
    const auto recipe = recipe_for(0);
    const auto method = default_method_config(0);
    cp = cli::make_checkpoint(run_classifier(load_dataset(recipe), method), method, recipe);
  }
  const auto data = load_dataset(recipe_from_json(cp.metadata.at("dataset")));
  const Batch batch = probe_batch(data.train, 512, 0);

  const auto one = landscape_probe(cp.net, batch, LandscapeConfig::defaults(LandscapeMode::OneD));
  const auto s1 = summarize(one);
  std::string where;
  for (std::size_t i = 0; i < s1.argmin.size() && i < 3; ++i)
    where += " (" + num(s1.argmin[i].first) + "," + num(s1.argmin[i].second) + ")";
  if (s1.argmin.size() > 3) where += " ... " + std::to_string(s1.argmin.size()) + " points";
  r.check(minimum_near_center(s1, one.empirical), "8a",
          "1D (51x51) minimum within one cell of (0, 1): argmin" + where);

  const auto two = landscape_probe(cp.net, batch, LandscapeConfig::defaults(LandscapeMode::TwoD));
  const auto s2 = summarize(two);
  r.check(s2.pearson >= 0.8, "8b",
          "2D (51x51) empirical vs scale-fitted k(1 - cos theta): pearson " + num(s2.pearson) + " (need >= 0.8), k " +
              num(two.kappa) + ", fitted scale " + num(s2.fitted_scale));
  r.note("8b", "radial share of 2D variance " + num(s2.radial_r2));
}

// ---- 9 ---------------------------------------------------------------------

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = io::read_file(e.path());
  return files;
}

void determinism(Report& r, const Options& opt) {
  if (opt.cli.empty()) throw ConfigError("criterion 9 needs --cli PATH");
  const fs::path root = fs::absolute(opt.work / "determinism");
  fs::remove_all(root);
  const std::string ckpt = (root / "train" / "checkpoint.json").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"theory", "theory --dim 100 --kappa-steps 10 --mc-samples 20000 --seed 4"},
      {"student-teacher", "student-teacher --variable n_samples --repeats 3 --seed 4"},
      {"train", "train --n-train 3000 --n-test 1000 --hidden 64,64 --epochs 4 --seed 4"},
      {"landscape-1d", "landscape --checkpoint " + ckpt + " --mode 1d --steps 21 --seed 4"},
      {"landscape-2d", "landscape --checkpoint " + ckpt + " --mode 2d --steps 21 --seed 4"}};
  for (const auto& [name, args] : commands) {
    const fs::path out = root / name;
    const std::string cmd = "\"" + opt.cli + "\" " + args + " --out \"" + out.string() + "\" 2>/dev/null";
    const int first = std::system(cmd.c_str());
    const auto a = snapshot(out);
    const int second = std::system(cmd.c_str());
    const auto b = snapshot(out);
    std::string files;
    for (const auto& [f, _] : a) files += " " + f;
    r.check(first == 0 && second == 0 && !a.empty() && a == b, "9." + name,
            "two runs of '" + args.substr(0, args.find(' ')) + "' produce byte-identical files:" + files);
  }
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: acceptance <1-9>[a|b|c] [--work DIR] [--cli PATH]\n";
    return 2;
  }
  Options opt;
  std::string which = argv[1];
  for (int i = 2; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--work") opt.work = argv[i + 1];
    else if (flag == "--cli") opt.cli = argv[i + 1];
    else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }
  if (which.size() == 2 && std::isalpha(static_cast<unsigned char>(which[1]))) {
    opt.checks = which.substr(1);
    which = which.substr(0, 1);
  }
  const std::map<std::string, std::function<void(Report&, const Options&)>> criteria{
      {"1", special_functions}, {"2", kl_asymptotics},         {"3", theory},
      {"4", gradients},         {"5", scale_invariance},        {"6", student_teacher_trends},
      {"7", calibration},       {"8", landscape},               {"9", determinism}};
  const auto it = criteria.find(which);
  if (it == criteria.end()) {
    std::cerr << "unknown criterion " << which << "\n";
    return 2;
  }
  Report report;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    fs::create_directories(opt.work);
    it->second(report, opt);
  } catch (const std::exception& e) {
    report.check(false, which, std::string("aborted: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "criterion " << which << (opt.checks == "all" ? "" : opt.checks) << ": "
            << (report.ok ? "PASS" : "FAIL") << " (" << num(secs, 3) << " s)" << std::endl;
  return report.ok ? 0 : 1;
}
