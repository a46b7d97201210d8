#pragma once

// Versioned JSON checkpoints:
//   { "format": "sphevar-checkpoint", "version": 1, "task", "master_seed",
//     "train_config": {...}, "network": { "layers": [...], "readout": {...},
//     "log_var" }, "metadata": {...} }
// Each layer stores shape, weight rows, running BN statistics, BN settings,
// rho and whether it is variational.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include "json.hpp"
#include "sphevar/io.hpp"
#include "sphevar/varnet.hpp"

namespace sphevar {

using Json = nlohmann::ordered_json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "sphevar-checkpoint";

namespace json_detail {

inline void reject_unknown_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

inline Json vector_json(const Eigen::VectorXd& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v(i))) throw NumericalError("cannot serialize a non-finite value");
    a.push_back(v(i));
  }
  return a;
}

inline Eigen::VectorXd vector_from(const Json& a, Eigen::Index expected, const std::string& what) {
  if (!a.is_array() || static_cast<Eigen::Index>(a.size()) != expected)
    throw ConfigError("checkpoint: " + what + " has wrong length");
  Eigen::VectorXd v(expected);
  for (Eigen::Index i = 0; i < expected; ++i) v(i) = a.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_json(m.row(i).transpose()));
  return rows;
}

inline Eigen::MatrixXd matrix_from(const Json& rows, Eigen::Index r, Eigen::Index c, const std::string& what) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != r)
    throw ConfigError("checkpoint: " + what + " has wrong row count");
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) m.row(i) = vector_from(rows[static_cast<std::size_t>(i)], c, what).transpose();
  return m;
}

}  // namespace json_detail

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "sgd") return OptimizerKind::SGD;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

inline Json to_json(const TrainConfig& c) {
  return Json{{"beta_max", c.beta_max},
              {"warmup_epochs", c.warmup_epochs},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"lr_base", c.lr_base},
              {"lr_noise", c.lr_noise},
              {"seed", c.seed},
              {"optimizer", to_string(c.optimizer)},
              {"bn_momentum", c.bn_momentum},
              {"bn_epsilon", c.bn_epsilon},
              {"kl_scale", c.kl_scale ? Json(*c.kl_scale) : Json(nullptr)},
              {"grad_norm_cap", c.grad_norm_cap}};
}

inline TrainConfig train_config_from_json(const Json& j) {
  json_detail::reject_unknown_keys(j,
                                   {"beta_max", "warmup_epochs", "epochs", "batch_size", "lr_base", "lr_noise", "seed",
                                    "optimizer", "bn_momentum", "bn_epsilon", "kl_scale", "grad_norm_cap"},
                                   "train_config");
  TrainConfig c;
  try {
    c.beta_max = j.value("beta_max", c.beta_max);
    c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_base = j.value("lr_base", c.lr_base);
    c.lr_noise = j.value("lr_noise", c.lr_noise);
    c.seed = j.value("seed", c.seed);
    c.optimizer = optimizer_from_string(j.value("optimizer", to_string(c.optimizer)));
    c.bn_momentum = j.value("bn_momentum", c.bn_momentum);
    c.bn_epsilon = j.value("bn_epsilon", c.bn_epsilon);
    if (j.contains("kl_scale") && !j["kl_scale"].is_null()) c.kl_scale = j["kl_scale"].get<double>();
    c.grad_norm_cap = j.value("grad_norm_cap", c.grad_norm_cap);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train_config: ") + e.what());
  }
  c.validate();
  return c;
}

struct Checkpoint {
  VarNet net;
  TrainConfig config;
  std::uint64_t master_seed = 0;
  Json metadata = Json::object();  ///< free-form, e.g. the dataset recipe
};

inline Json to_json(const VarNet& net) {
  Json layers = Json::array();
  for (const auto& l : net.layers()) {
    layers.push_back(Json{{"in", l.in_dim()},
                          {"out", l.out_dim()},
                          {"weights", json_detail::matrix_json(l.weights)},
                          {"running_mean", json_detail::vector_json(l.bn.running_mean)},
                          {"running_var", json_detail::vector_json(l.bn.running_var)},
                          {"bn_momentum", l.bn.momentum},
                          {"bn_epsilon", l.bn.epsilon},
                          {"rho", l.noise.rho()},
                          {"variational", l.variational}});
  }
  return Json{{"layers", layers},
              {"readout", Json{{"weights", json_detail::matrix_json(net.readout().weights)},
                               {"bias", json_detail::vector_json(net.readout().bias)}}},
              {"log_var", net.log_var()}};
}

inline VarNet network_from_json(const Json& j, Task task) {
  std::vector<NoisyNormLayer> layers;
  for (const auto& l : j.at("layers")) {
    const int in = l.at("in").get<int>();
    const int out = l.at("out").get<int>();
    BatchNormState bn(out, l.at("bn_momentum").get<double>(), l.at("bn_epsilon").get<double>());
    bn.running_mean = json_detail::vector_from(l.at("running_mean"), out, "running_mean");
    bn.running_var = json_detail::vector_from(l.at("running_var"), out, "running_var");
    if ((bn.running_var.array() < 0.0).any()) throw ConfigError("checkpoint: negative running variance");
    layers.push_back({json_detail::matrix_from(l.at("weights"), out, in, "weights"), std::move(bn),
                      EffNoiseParam(l.at("rho").get<double>(), out, in), l.at("variational").get<bool>()});
  }
  if (layers.empty()) throw ConfigError("checkpoint: no layers");
  const auto& r = j.at("readout");
  const Eigen::Index outputs = static_cast<Eigen::Index>(r.at("bias").size());
  Readout readout{json_detail::matrix_from(r.at("weights"), outputs, layers.back().out_dim(), "readout weights"),
                  json_detail::vector_from(r.at("bias"), outputs, "readout bias")};
  return VarNet(task, std::move(layers), std::move(readout), j.at("log_var").get<double>());
}

inline std::string serialize_checkpoint(const Checkpoint& cp) {
  const Json j{{"format", kCheckpointFormat},
               {"version", kCheckpointVersion},
               {"task", cp.net.task() == Task::Classification ? "classification" : "regression"},
               {"master_seed", cp.master_seed},
               {"train_config", to_json(cp.config)},
               {"network", to_json(cp.net)},
               {"metadata", cp.metadata}};
  return j.dump(1) + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.value("format", std::string()) != kCheckpointFormat) throw ConfigError("not a sphevar checkpoint");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion)
      throw ConfigError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    const std::string task = j.at("task").get<std::string>();
    if (task != "classification" && task != "regression") throw ConfigError("checkpoint: unknown task " + task);
    Checkpoint cp{network_from_json(j.at("network"), task == "classification" ? Task::Classification : Task::Regression),
                  train_config_from_json(j.at("train_config")), j.at("master_seed").get<std::uint64_t>(),
                  j.value("metadata", Json::object())};
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  io::atomic_write(path, serialize_checkpoint(cp));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(io::read_file(path)); }

}  // namespace sphevar
