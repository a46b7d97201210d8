#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "sphevar/checkpoint.hpp"
#include "sphevar/error.hpp"
#include "sphevar/experiments.hpp"
#include "sphevar/io.hpp"

namespace sphevar::cli {

enum ExitCode : int { kOk = 0, kConfigError = 2, kToleranceFailure = 3, kIoError = 4, kNumericalError = 5 };

/// Environment variable naming the default output directory.
inline constexpr const char* kOutEnv = "SPHEVAR_OUT";

namespace cli_detail {

using io::format_double;

/// Options of one subcommand that are also accepted as keys of a JSON
/// `--config` file and echoed to `config.resolved`.
class Params {
 public:
  explicit Params(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& var, const std::string& desc) {
    CLI::Option* o = app_->add_option("--" + name, var, desc)->capture_default_str();
    names_.push_back(name);
    emit_[name] = [&var] { return Json(var); };
    return o;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& desc) {
    CLI::Option* o = app_->add_flag("--" + name + ",!--no-" + name, var, desc);
    names_.push_back(name);
    emit_[name] = [&var] { return Json(var); };
    return o;
  }

  /// Replaces the echoed value, e.g. to report an effective default.
  void resolve(const std::string& name, std::function<Json()> f) { emit_[name] = std::move(f); }

  /// Values from the file fill options not given on the command line.
  void apply_config(const Json& cfg) {
    if (!cfg.is_object()) throw ConfigError("--config: top level must be a JSON object");
    for (const auto& [key, value] : cfg.items()) {
      if (!emit_.count(key)) throw ConfigError("--config: unknown key '" + key + "'");
      CLI::Option* opt = app_->get_option_no_throw("--" + key);
      if (!opt || opt->count() > 0) continue;
      std::vector<std::string> items;
      auto scalar = [&](const Json& v) {
        if (v.is_string()) return v.get<std::string>();
        if (v.is_boolean()) return std::string(v.get<bool>() ? "true" : "false");
        if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
        if (v.is_number()) return format_double(v.get<double>());
        throw ConfigError("--config: key '" + key + "' has an unsupported value");
      };
      if (value.is_array()) {
        for (const auto& v : value) items.push_back(scalar(v));
      } else if (!value.is_null()) {
        items.push_back(scalar(value));
      } else {
        continue;
      }
      try {
        opt->clear();
        for (auto& s : items) opt->add_result(s);
        opt->run_callback();
      } catch (const CLI::Error& e) {
        throw ConfigError("--config: key '" + key + "': " + e.what());
      }
    }
  }

  Json resolved() const {
    Json j = Json::object();
    for (const auto& n : names_) j[n] = emit_.at(n)();
    return j;
  }

 private:
  CLI::App* app_;
  std::vector<std::string> names_;
  std::map<std::string, std::function<Json()>> emit_;
};

inline std::string fmt(double x) { return format_double(x); }

inline Json report_json(const CalibrationReport& r) {
  Json bins = Json::array();
  for (const auto& b : r.bins)
    bins.push_back(Json{{"mean_confidence", b.mean_confidence}, {"accuracy", b.accuracy}, {"count", b.count}});
  return Json{{"accuracy", r.accuracy}, {"nll", r.nll}, {"ece", r.ece}, {"bins", bins}};
}

// Non-finite values are not valid JSON numbers.
inline Json number(double x) { return std::isfinite(x) ? Json(x) : Json(format_double(x)); }

class Output {
 public:
  explicit Output(std::filesystem::path dir) : dir_(std::move(dir)) {}
  const std::filesystem::path& dir() const { return dir_; }
  void write(const std::string& name, const std::string& content) const { io::atomic_write(dir_ / name, content); }
  void json(const std::string& name, const Json& j) const { write(name, j.dump(2) + "\n"); }

 private:
  std::filesystem::path dir_;
};

inline std::string default_out(const std::string& command) {
  const char* env = std::getenv(kOutEnv);
  return (env && *env) ? std::string(env) : ("sphevar-out/" + command);
}

// ---- theory ---------------------------------------------------------------

struct TheoryArgs {
  int dim = 100;
  double kappa_min = 0.1;
  double kappa_max = 1e6;
  int kappa_steps = 31;
  bool zero_row = true;
  long long mc_samples = 200000;
  long long mc_inputs = 32;
  bool strict = false;
  std::uint64_t seed = 0;

  void bind(Params& p) {
    p.add("dim", dim, "sphere dimension D");
    p.add("kappa-min", kappa_min, "smallest positive kappa");
    p.add("kappa-max", kappa_max, "largest kappa");
    p.add("kappa-steps", kappa_steps, "number of log-spaced kappa values");
    p.flag("zero-row", zero_row, "prepend a kappa = 0 row");
    p.add("mc-samples", mc_samples, "vMF samples per kappa");
    p.add("mc-inputs", mc_inputs, "random inputs per kappa");
    p.flag("strict", strict, "also gate the exit status on the interpolant and KL tolerances");
    p.add("seed", seed, "master seed");
  }

  void validate() const {
    if (dim < 2) throw ConfigError("--dim must be >= 2");
    if (!(kappa_min > 0.0) || !std::isfinite(kappa_min)) throw ConfigError("--kappa-min must be positive");
    if (!(kappa_max >= kappa_min) || !std::isfinite(kappa_max))
      throw ConfigError("--kappa-min must not exceed --kappa-max");
    if (kappa_steps < 1) throw ConfigError("--kappa-steps must be >= 1");
    if (mc_samples < 2) throw ConfigError("--mc-samples must be >= 2");
    if (mc_inputs < 1) throw ConfigError("--mc-inputs must be >= 1");
  }
};

inline int run_theory(const TheoryArgs& a, const Output& out, std::ostream& log) {
  a.validate();
  experiments::TheoryConfig cfg;
  cfg.dim = a.dim;
  if (a.zero_row) cfg.kappas.push_back(0.0);
  for (double k : experiments::log_spaced(a.kappa_min, a.kappa_max, a.kappa_steps)) cfg.kappas.push_back(k);
  cfg.mc_samples = static_cast<std::size_t>(a.mc_samples);
  cfg.mc_inputs = static_cast<std::size_t>(a.mc_inputs);
  cfg.seed = a.seed;
  const auto rows = experiments::theory_check(cfg);

  io::CsvWriter csv("theory", {"kappa", "sigma_u_sq_mc", "sigma_u_sq_mc_se", "sigma_u_sq_exact", "sigma_u_sq_interp",
                               "a_mc", "a_mc_se", "a_exact", "sigma_eff", "kl_exact", "kl_approx"});
  for (const auto& r : rows)
    csv.row({fmt(r.kappa), fmt(r.sigma_u_sq_mc), fmt(r.sigma_u_sq_mc_se), fmt(r.sigma_u_sq_exact),
             fmt(r.sigma_u_sq_interp), fmt(r.a_mc), fmt(r.a_mc_se), fmt(r.a_exact), fmt(r.sigma_eff), fmt(r.kl_exact),
             fmt(r.kl_approx)});
  out.write("theory.csv", csv.str());

  const experiments::TheoryTolerances tol;
  const auto s = experiments::summarize(rows, a.dim, tol);
  const bool gated = s.mc_pass && s.a_pass && s.consistency_pass && (!a.strict || (s.interp_pass && s.kl_pass));
  out.json("theory_summary.json",
           Json{{"rows", rows.size()},
                {"max_sigma_u_sq_z", number(s.max_sigma_u_sq_z)},
                {"max_a_z", number(s.max_a_z)},
                {"max_interp_rel", number(s.max_interp_rel)},
                {"max_kl_rel", number(s.max_kl_rel)},
                {"max_sigma_eff_consistency", number(s.max_sigma_eff_consistency)},
                {"tolerances",
                 Json{{"mc_se", tol.mc_se},
                      {"interp_rel", tol.interp_rel},
                      {"kl_rel", tol.kl_rel},
                      {"kl_kappa_window_over_dim", Json::array({tol.kl_kappa_lo_over_dim, tol.kl_kappa_hi_over_dim})}}},
                {"pass",
                 Json{{"mc", s.mc_pass},
                      {"mean_resultant", s.a_pass},
                      {"interpolant", s.interp_pass},
                      {"kl", s.kl_pass},
                      {"consistency", s.consistency_pass}}},
                {"strict", a.strict},
                {"gated_pass", gated}});
  log << "theory: " << rows.size() << " rows, max MC z " << s.max_sigma_u_sq_z << ", interpolant rel "
      << s.max_interp_rel << ", KL rel " << s.max_kl_rel << (gated ? " [pass]" : " [FAIL]") << "\n";
  return gated ? kOk : kToleranceFailure;
}

// ---- student-teacher ------------------------------------------------------

struct StudentTeacherArgs {
  std::string variable = "obs_noise";
  std::vector<double> grid;
  int repeats = 5;
  double obs_noise = 0.1;
  int dim = 100;
  int n_samples = 1000;
  experiments::StudentConfig student;
  std::uint64_t seed = 0;

  static std::vector<double> default_grid(experiments::SweepVariable v) {
    switch (v) {
      case experiments::SweepVariable::ObsNoise: return {0.05, 0.1, 0.2, 0.4, 0.8};
      case experiments::SweepVariable::Dim: return {20, 50, 100, 200};
      case experiments::SweepVariable::NSamples: return {100, 300, 1000, 3000};
    }
    return {};
  }

  void bind(Params& p) {
    p.add("variable", variable, "swept variable: obs_noise, dim or n_samples");
    p.add("grid", grid, "values of the swept variable (default depends on --variable)")->delimiter(',');
    p.resolve("grid", [this] {
      return Json(grid.empty() ? default_grid(experiments::sweep_variable_from_string(variable)) : grid);
    });
    p.add("repeats", repeats, "repeats per grid cell");
    p.add("obs-noise", obs_noise, "observation noise std when not swept");
    p.add("dim", dim, "input dimension when not swept");
    p.add("n-samples", n_samples, "training examples when not swept");
    p.add("beta", student.beta, "KL weight");
    p.add("steps", student.max_steps, "maximum Adam steps");
    p.add("patience", student.patience, "plateau window in steps");
    p.add("tolerance", student.tolerance, "minimum objective improvement");
    p.add("lr", student.lr, "learning rate of the direction");
    p.add("lr-noise", student.lr_noise, "learning rate of the noise and variance parameters");
    p.add("init-sigma", student.init_sigma_eff, "initial sigma_eff");
    p.add("seed", seed, "master seed");
  }

  experiments::SweepSpec spec() const {
    experiments::SweepSpec s;
    s.variable = experiments::sweep_variable_from_string(variable);
    s.grid = grid.empty() ? default_grid(s.variable) : grid;
    s.repeats = repeats;
    s.obs_noise = obs_noise;
    s.dim = dim;
    s.n_samples = n_samples;
    s.seed = seed;
    s.validate();
    return s;
  }
};

inline int run_student_teacher(const StudentTeacherArgs& a, const Output& out, std::ostream& log) {
  const auto spec = a.spec();
  a.student.validate();
  const auto cells = experiments::student_teacher(spec, a.student);
  io::CsvWriter csv("student-teacher", {"cell", "variable", "value", "repeat", "dim", "n_samples", "obs_noise",
                                        "sigma_eff", "cosine", "inferred_a", "final_nll", "steps", "converged"});
  for (const auto& c : cells)
    csv.row({std::to_string(c.cell), a.variable, fmt(c.value), std::to_string(c.repeat), std::to_string(c.dim),
             std::to_string(c.n_samples), fmt(c.obs_noise), fmt(c.result.sigma_eff), fmt(c.result.cosine),
             fmt(c.result.inferred_a), fmt(c.result.final_nll), std::to_string(c.result.steps),
             c.result.converged ? "1" : "0"});
  out.write("student_teacher.csv", csv.str());

  const auto t = experiments::summarize_trend(spec, cells);
  const int sign = experiments::expected_sigma_trend(spec.variable);
  const bool trend = t.spearman_sigma_eff * sign >= 0.8;
  int unconverged = 0;
  for (const auto& c : cells) unconverged += c.result.converged ? 0 : 1;
  out.json("student_teacher_summary.json", Json{{"variable", a.variable},
                                                {"grid", t.grid},
                                                {"median_sigma_eff", t.median_sigma_eff},
                                                {"median_cosine", t.median_cosine},
                                                {"median_inferred_a", t.median_inferred_a},
                                                {"spearman_sigma_eff", t.spearman_sigma_eff},
                                                {"spearman_cosine", t.spearman_cosine},
                                                {"expected_sign", sign},
                                                {"trend_pass", trend},
                                                {"unconverged_cells", unconverged}});
  log << "student-teacher " << a.variable << ": spearman(sigma_eff) " << t.spearman_sigma_eff << " expected sign "
      << sign << (trend ? " [pass]" : " [FAIL]") << "\n";
  return kOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  experiments::SyntheticDataConfig data;
  std::string train_csv;
  std::string test_csv;
  bool standardize = true;
  long long data_seed = -1;
  std::vector<int> hidden{128, 128};
  double init_sigma = 0.1;
  int mc_samples = 8;
  TrainConfig train = experiments::default_method_config().train;
  std::string optimizer = "adam";
  double kl_scale = -1.0;
  std::uint64_t seed = 0;

  void bind(Params& p) {
    p.add("train-csv", train_csv, "training CSV with a 'label' column (default: synthetic data)");
    p.add("test-csv", test_csv, "held-out CSV, required with --train-csv");
    p.flag("standardize", standardize, "standardize CSV features with training statistics");
    p.add("classes", data.classes, "synthetic: number of classes");
    p.add("input-dim", data.dim, "synthetic: feature dimension");
    p.add("n-train", data.n_train, "synthetic: training examples");
    p.add("n-test", data.n_test, "synthetic: held-out examples");
    p.add("clusters", data.clusters_per_class, "synthetic: clusters per class");
    p.add("radius", data.radius, "synthetic: radius of the cluster-center shell");
    p.add("cluster-std", data.cluster_std, "synthetic: within-cluster std");
    p.add("label-noise", data.label_noise, "synthetic: fraction of resampled labels");
    p.add("data-seed", data_seed, "synthetic: data seed (default: --seed)");
    p.resolve("data-seed", [this] { return Json(effective_data_seed()); });
    p.add("hidden", hidden, "hidden layer widths")->delimiter(',');
    p.add("init-sigma", init_sigma, "initial sigma_eff of every layer");
    p.add("mc-samples", mc_samples, "Monte Carlo passes for the noisy prediction");
    p.add("epochs", train.epochs, "training epochs");
    p.add("batch-size", train.batch_size, "minibatch size");
    p.add("lr", train.lr_base, "learning rate of weights and readout");
    p.add("lr-noise", train.lr_noise, "learning rate of the noise parameters");
    p.add("beta", train.beta_max, "final KL weight (0 trains the deterministic baseline)");
    p.add("warmup", train.warmup_epochs, "epochs of linear KL warm-up");
    p.add("optimizer", optimizer, "adam or sgd");
    p.add("bn-momentum", train.bn_momentum, "running-statistics momentum");
    p.add("bn-epsilon", train.bn_epsilon, "batch-norm epsilon");
    p.add("kl-scale", kl_scale, "multiplier on the total KL (negative: 1 / n_train)");
    p.resolve("kl-scale", [this] {
      if (kl_scale >= 0.0) return Json(kl_scale);
      return train_csv.empty() ? Json(1.0 / data.n_train) : Json("1/n_train");
    });
    p.add("grad-norm-cap", train.grad_norm_cap, "abort when the gradient norm exceeds this");
    p.add("seed", seed, "master seed");
  }

  std::uint64_t effective_data_seed() const {
    return data_seed < 0 ? seed : static_cast<std::uint64_t>(data_seed);
  }

  experiments::DatasetRecipe recipe() const {
    experiments::DatasetRecipe r;
    if (!train_csv.empty() || !test_csv.empty()) {
      if (train_csv.empty() || test_csv.empty()) throw ConfigError("--train-csv and --test-csv go together");
      r.kind = "csv";
      r.train_csv = std::filesystem::absolute(train_csv).lexically_normal().string();
      r.test_csv = std::filesystem::absolute(test_csv).lexically_normal().string();
      r.standardize = standardize;
    } else {
      r.synthetic = data;
      r.synthetic.seed = effective_data_seed();
      r.synthetic.validate();
    }
    return r;
  }

  experiments::ClassifierConfig classifier() const {
    experiments::ClassifierConfig c;
    c.hidden = hidden;
    c.train = train;
    c.train.optimizer = optimizer_from_string(optimizer);
    c.train.seed = seed;
    if (kl_scale >= 0.0) c.train.kl_scale = kl_scale;
    c.init_sigma_eff = init_sigma;
    c.mc_samples = mc_samples;
    if (c.train.beta_max == 0.0) c = experiments::baseline_of(c);
    if (hidden.empty()) throw ConfigError("--hidden needs at least one layer");
    for (int h : hidden)
      if (h < 1) throw ConfigError("--hidden widths must be positive");
    if (!(init_sigma > 0.0)) throw ConfigError("--init-sigma must be positive");
    if (mc_samples < 0) throw ConfigError("--mc-samples must be >= 0");
    c.train.validate();
    return c;
  }
};

inline Checkpoint make_checkpoint(const experiments::ClassifierRun& run, const experiments::ClassifierConfig& cfg,
                                  const experiments::DatasetRecipe& recipe) {
  Checkpoint cp{run.net, cfg.train, cfg.train.seed, Json::object()};
  cp.metadata["dataset"] = experiments::to_json(recipe);
  cp.metadata["hidden"] = cfg.hidden;
  cp.metadata["init_sigma_eff"] = cfg.init_sigma_eff;
  cp.metadata["mc_samples"] = cfg.mc_samples;
  return cp;
}

inline std::string train_log_csv(const std::vector<TrainRecord>& records, std::size_t depth) {
  std::vector<std::string> header{"epoch", "beta", "nll", "kl_total", "kl_scale", "loss"};
  for (std::size_t l = 0; l < depth; ++l) header.push_back("sigma_eff_" + std::to_string(l));
  for (const char* h : {"eval_accuracy", "eval_nll", "eval_ece"}) header.emplace_back(h);
  io::CsvWriter csv("train", header);
  for (const auto& r : records) {
    std::vector<std::string> row{std::to_string(r.epoch), fmt(r.beta), fmt(r.nll), fmt(r.kl_total), fmt(r.kl_scale),
                                 fmt(r.loss)};
    for (double s : r.sigma_eff) row.push_back(fmt(s));
    if (r.eval) {
      for (double v : {r.eval->accuracy, r.eval->nll, r.eval->ece}) row.push_back(fmt(v));
    } else {
      row.insert(row.end(), 3, "");
    }
    csv.row(row);
  }
  return csv.str();
}

inline int run_train(const TrainArgs& a, const Output& out, std::ostream& log) {
  const auto recipe = a.recipe();
  const auto cfg = a.classifier();
  const auto split = experiments::load_dataset(recipe);
  if (split.train.classes < 2) throw ConfigError("training data has fewer than two classes");
  const auto run = experiments::run_classifier(split, cfg);

  save_checkpoint(out.dir() / "checkpoint.json", make_checkpoint(run, cfg, recipe));
  out.write("train_log.csv", train_log_csv(run.records, run.net.depth()));
  Json mc = report_json(run.monte_carlo);
  mc["samples"] = cfg.variational ? cfg.mc_samples : 0;
  out.json("calibration.json", Json{{"variational", cfg.variational},
                                    {"deterministic", report_json(run.deterministic)},
                                    {"monte_carlo", mc},
                                    {"sigma_eff", run.net.sigma_eff()},
                                    {"n_train", split.train.size()},
                                    {"n_test", split.test.size()}});
  log << "train: accuracy " << run.deterministic.accuracy << ", ECE " << run.deterministic.ece << " (MC "
      << run.monte_carlo.ece << ")\n";
  return kOk;
}

// ---- landscape ------------------------------------------------------------

struct LandscapeArgs {
  std::string checkpoint;
  int layer = 0;
  std::string mode = "2d";
  int steps = 51;
  double kappa = -1.0;
  int batch_size = 512;
  std::uint64_t seed = 0;

  void bind(Params& p) {
    p.add("checkpoint", checkpoint, "checkpoint written by 'train'");
    p.add("layer", layer, "index of the probed hidden layer");
    p.add("mode", mode, "1d or 2d");
    p.add("steps", steps, "grid points per axis");
    p.add("kappa", kappa, "kappa of the analytic surface (negative: inferred from sigma_eff)");
    p.add("batch-size", batch_size, "examples in the fixed probe batch");
    p.add("seed", seed, "seed of the probe directions and batch");
  }
};

inline int run_landscape(const LandscapeArgs& a, const Output& out, std::ostream& log) {
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  if (a.layer < 0) throw ConfigError("--layer must be >= 0");
  if (a.steps < 2) throw ConfigError("--steps must be >= 2");
  const auto mode = experiments::landscape_mode_from_string(a.mode);
  if (!std::filesystem::exists(a.checkpoint)) throw IoError("checkpoint not found: " + a.checkpoint);
  const Checkpoint cp = load_checkpoint(a.checkpoint);
  if (!cp.metadata.contains("dataset")) throw ConfigError("checkpoint carries no dataset recipe");
  const auto split = experiments::load_dataset(experiments::recipe_from_json(cp.metadata.at("dataset")));
  const Batch batch = experiments::probe_batch(split.train, a.batch_size, a.seed);

  auto cfg = experiments::LandscapeConfig::defaults(mode, a.steps);
  cfg.layer = static_cast<std::size_t>(a.layer);
  if (a.kappa >= 0.0) cfg.kappa = a.kappa;
  cfg.seed = a.seed;
  const auto res = experiments::landscape_probe(cp.net, batch, cfg);
  const auto s = experiments::summarize(res);

  const std::string ax = mode == experiments::LandscapeMode::OneD ? "x" : "a";
  const std::string bx = mode == experiments::LandscapeMode::OneD ? "y" : "b";
  auto grid_csv = [&](const experiments::LandscapeGrid& g, const std::string& value) {
    io::CsvWriter csv("landscape", {ax, bx, value});
    for (int i = 0; i < g.a.steps; ++i)
      for (int j = 0; j < g.b.steps; ++j) csv.row({fmt(g.a.at(i)), fmt(g.b.at(j)), fmt(g.values(i, j))});
    return csv.str();
  };
  out.write("landscape_empirical.csv", grid_csv(res.empirical, "loss"));
  out.write("landscape_analytic.csv", grid_csv(res.analytic, "delta_loss"));

  Json argmin = Json::array();
  for (const auto& [x, y] : s.argmin) argmin.push_back(Json::array({x, y}));
  Json summary{{"mode", a.mode},
               {"layer", a.layer},
               {"kappa", res.kappa},
               {"base_loss", res.base_loss},
               {"min_loss", s.min_value},
               {"argmin", argmin},
               {"pearson", number(s.pearson)},
               {"fitted_scale", number(s.fitted_scale)}};
  if (mode == experiments::LandscapeMode::OneD)
    summary["minimum_near_center"] = experiments::minimum_near_center(s, res.empirical);
  else
    summary["radial_r2"] = s.radial_r2;
  out.json("landscape_summary.json", summary);
  log << "landscape " << a.mode << ": pearson " << s.pearson << ", kappa " << res.kappa << "\n";
  return kOk;
}

}  // namespace cli_detail

using cli_detail::make_checkpoint;

/// Entry point of `sphevar theory|student-teacher|train|landscape`.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Spherical variational noise: theory checks, student-teacher sweeps, training and landscapes", "sphevar"};
  app.require_subcommand(1);

  TheoryArgs theory;
  StudentTeacherArgs st;
  TrainArgs train_args;
  LandscapeArgs land;
  struct Entry {
    CLI::App* app;
    std::unique_ptr<Params> params;
    std::string config;
    std::string out;
    std::function<int(const Output&, std::ostream&)> run;
  };
  std::vector<Entry> entries;
  auto add = [&](const std::string& name, const std::string& desc, auto& args, auto runner) {
    CLI::App* sub = app.add_subcommand(name, desc);
    entries.push_back(Entry{sub, std::make_unique<Params>(sub), "", default_out(name), {}});
    Entry& e = entries.back();
    args.bind(*e.params);
    sub->add_option("--config", e.config, "JSON file of option values; command-line flags take precedence");
    e.params->add("out", e.out, std::string("output directory (default: $") + kOutEnv + " or sphevar-out/<command>)");
    e.run = [&args, runner](const Output& o, std::ostream& log) { return runner(args, o, log); };
  };
  entries.reserve(4);
  add("theory", "activation-variance and KL checks against Monte Carlo", theory, run_theory);
  add("student-teacher", "noise recovery in a linear student-teacher model", st, run_student_teacher);
  add("train", "train a classifier and report calibration", train_args, run_train);
  add("landscape", "loss landscape around a trained layer", land, run_landscape);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  for (auto& e : entries) {
    if (!e.app->parsed()) continue;
    try {
      if (!e.config.empty()) {
        Json cfg;
        try {
          cfg = Json::parse(io::read_file(e.config));
        } catch (const nlohmann::json::exception& ex) {
          throw ConfigError(e.config + ": " + ex.what());
        }
        e.params->apply_config(cfg);
      }
      const Output o{e.out};
      o.json("config.resolved", e.params->resolved());
      return e.run(o, err);
    } catch (const ConfigError& ex) {
      err << "config error: " << ex.what() << "\n";
      return kConfigError;
    } catch (const DomainError& ex) {
      err << "config error: " << ex.what() << "\n";
      return kConfigError;
    } catch (const IoError& ex) {
      err << "I/O error: " << ex.what() << "\n";
      return kIoError;
    } catch (const NumericalError& ex) {
      err << "numerical error: " << ex.what() << "\n";
      return kNumericalError;
    } catch (const std::filesystem::filesystem_error& ex) {
      err << "I/O error: " << ex.what() << "\n";
      return kIoError;
    }
  }
  return kConfigError;
}

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"sphevar"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace sphevar::cli
