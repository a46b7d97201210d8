#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sphevar/checkpoint.hpp"
#include "sphevar/io.hpp"
#include "sphevar/rng.hpp"
#include "sphevar/varnet.hpp"

namespace sphevar::experiments {

/// K classes, each a mixture of `clusters_per_class` isotropic Gaussians whose
/// centers lie on the sphere of radius `radius`. A fraction `label_noise` of
/// labels is replaced by a uniformly drawn class.
struct SyntheticDataConfig {
  int classes = 10;
  int dim = 128;
  int n_train = 20000;
  int n_test = 5000;
  int clusters_per_class = 2;
  double radius = 4.0;
  double cluster_std = 1.0;
  double label_noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (dim < 2) throw ConfigError("dim must be >= 2");
    if (n_train < 2 || n_test < 1) throw ConfigError("need n_train >= 2 and n_test >= 1");
    if (clusters_per_class < 1) throw ConfigError("clusters_per_class must be >= 1");
    if (!(radius >= 0.0) || !(cluster_std > 0.0)) throw ConfigError("radius must be >= 0 and cluster_std > 0");
    if (!(label_noise >= 0.0 && label_noise <= 1.0)) throw ConfigError("label_noise must lie in [0, 1]");
  }
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Per-feature affine map fitted on training data (mean / std).
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd inv_std;

  static Standardizer fit(const Eigen::MatrixXd& x) {
    Standardizer s;
    s.mean = x.rowwise().mean();
    const Eigen::VectorXd var = (x.colwise() - s.mean).rowwise().squaredNorm() / static_cast<double>(x.cols());
    s.inv_std = (var.array() > 0.0).select(var.array().rsqrt(), 1.0);
    return s;
  }

  void apply(Eigen::MatrixXd& x) const { x = (x.colwise() - mean).array().colwise() * inv_std.array(); }
};

inline void standardize(DataSplit& split) {
  const Standardizer s = Standardizer::fit(split.train.x);
  s.apply(split.train.x);
  s.apply(split.test.x);
}

inline DataSplit make_synthetic(const SyntheticDataConfig& cfg) {
  cfg.validate();
  Rng rng = make_stream(cfg.seed, 0x5eed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int n_centers = cfg.classes * cfg.clusters_per_class;
  Eigen::MatrixXd centers(cfg.dim, n_centers);
  for (int c = 0; c < n_centers; ++c) {
    for (int i = 0; i < cfg.dim; ++i) centers(i, c) = normal(rng);
    centers.col(c) *= cfg.radius / centers.col(c).norm();
  }
  auto draw = [&](int n) {
    Dataset d;
    d.classes = cfg.classes;
    d.x.resize(cfg.dim, n);
    d.labels.resize(static_cast<std::size_t>(n));
    for (int j = 0; j < n; ++j) {
      const int center = static_cast<int>(uniform(rng) * n_centers) % n_centers;
      int label = center % cfg.classes;
      for (int i = 0; i < cfg.dim; ++i) d.x(i, j) = centers(i, center) + cfg.cluster_std * normal(rng);
      if (uniform(rng) < cfg.label_noise) label = static_cast<int>(uniform(rng) * cfg.classes) % cfg.classes;
      d.labels[static_cast<std::size_t>(j)] = label;
    }
    return d;
  };
  DataSplit split;
  split.train = draw(cfg.n_train);
  split.test = draw(cfg.n_test);
  standardize(split);
  return split;
}

/// Reads a CSV with a header row; the column named `label` holds integer
/// class ids in [0, K), every other column is a numeric feature.
inline Dataset load_csv_dataset(const std::filesystem::path& path) {
  const io::CsvTable t = io::parse_csv(io::read_file(path));
  std::size_t label_col = t.header.size();
  for (std::size_t c = 0; c < t.header.size(); ++c)
    if (t.header[c] == "label") label_col = c;
  if (label_col == t.header.size()) throw ConfigError(path.string() + ": no 'label' column");
  if (t.header.size() < 3) throw ConfigError(path.string() + ": need at least two feature columns");
  if (t.rows.empty()) throw ConfigError(path.string() + ": no data rows");
  Dataset d;
  d.x.resize(static_cast<Eigen::Index>(t.header.size() - 1), static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    Eigen::Index f = 0;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      const std::string& cell = t.rows[r][c];
      if (c == label_col) {
        const double v = io::parse_double(cell);
        if (v != std::floor(v) || v < 0) throw ConfigError(path.string() + ": bad label '" + cell + "'");
        d.labels.push_back(static_cast<int>(v));
        d.classes = std::max(d.classes, static_cast<int>(v) + 1);
      } else {
        d.x(f++, static_cast<Eigen::Index>(r)) = io::parse_double(cell);
      }
    }
  }
  if (!d.x.allFinite()) throw ConfigError(path.string() + ": non-finite feature value");
  return d;
}

/// Where a training run's data came from, stored in checkpoints so that
/// later probes can rebuild the same split.
struct DatasetRecipe {
  std::string kind = "synthetic";  ///< "synthetic" or "csv"
  SyntheticDataConfig synthetic;
  std::string train_csv;
  std::string test_csv;
  bool standardize = true;
};

inline Json to_json(const DatasetRecipe& r) {
  if (r.kind == "csv")
    return Json{{"kind", "csv"}, {"train_csv", r.train_csv}, {"test_csv", r.test_csv}, {"standardize", r.standardize}};
  const auto& s = r.synthetic;
  return Json{{"kind", "synthetic"},   {"classes", s.classes},
              {"dim", s.dim},          {"n_train", s.n_train},
              {"n_test", s.n_test},    {"clusters_per_class", s.clusters_per_class},
              {"radius", s.radius},    {"cluster_std", s.cluster_std},
              {"label_noise", s.label_noise}, {"seed", s.seed}};
}

inline DatasetRecipe recipe_from_json(const Json& j) {
  DatasetRecipe r;
  try {
    r.kind = j.at("kind").get<std::string>();
    if (r.kind == "csv") {
      json_detail::reject_unknown_keys(j, {"kind", "train_csv", "test_csv", "standardize"}, "dataset");
      r.train_csv = j.at("train_csv").get<std::string>();
      r.test_csv = j.at("test_csv").get<std::string>();
      r.standardize = j.at("standardize").get<bool>();
    } else if (r.kind == "synthetic") {
      json_detail::reject_unknown_keys(j,
                                       {"kind", "classes", "dim", "n_train", "n_test", "clusters_per_class", "radius",
                                        "cluster_std", "label_noise", "seed"},
                                       "dataset");
      auto& s = r.synthetic;
      s.classes = j.at("classes").get<int>();
      s.dim = j.at("dim").get<int>();
      s.n_train = j.at("n_train").get<int>();
      s.n_test = j.at("n_test").get<int>();
      s.clusters_per_class = j.at("clusters_per_class").get<int>();
      s.radius = j.at("radius").get<double>();
      s.cluster_std = j.at("cluster_std").get<double>();
      s.label_noise = j.at("label_noise").get<double>();
      s.seed = j.at("seed").get<std::uint64_t>();
    } else {
      throw ConfigError("dataset: unknown kind '" + r.kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset recipe: ") + e.what());
  }
  return r;
}

inline DataSplit load_dataset(const DatasetRecipe& r) {
  if (r.kind == "synthetic") return make_synthetic(r.synthetic);
  if (r.kind != "csv") throw ConfigError("dataset: unknown kind '" + r.kind + "'");
  DataSplit split{load_csv_dataset(r.train_csv), load_csv_dataset(r.test_csv)};
  if (split.train.x.rows() != split.test.x.rows()) throw ConfigError("train and test CSVs have different feature counts");
  split.train.classes = split.test.classes = std::max(split.train.classes, split.test.classes);
  if (r.standardize) standardize(split);
  return split;
}

}  // namespace sphevar::experiments
