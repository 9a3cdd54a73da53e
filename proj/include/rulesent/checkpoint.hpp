// Self-describing JSON checkpoints. Doubles are written in shortest
// round-trip form, so save -> load is bit-exact.
#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rulesent/cnn_model.hpp"
#include "rulesent/distill.hpp"
#include "rulesent/error.hpp"

namespace rulesent {

inline constexpr const char* kCheckpointFormat = "rulesent-cnn/1";

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"widths", c.widths},     {"maps", c.maps},
          {"dropout", c.dropout},   {"batch_size", c.batch_size},
          {"adadelta_rho", c.adadelta_rho}, {"adadelta_eps", c.adadelta_eps},
          {"max_epochs", c.max_epochs},     {"patience", c.patience},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.widths = j.at("widths").get<std::vector<std::size_t>>();
  c.maps = j.at("maps").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.adadelta_rho = j.at("adadelta_rho").get<double>();
  c.adadelta_eps = j.at("adadelta_eps").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json to_json(const DistillConfig& c) {
  return {{"mode", std::string(to_string(c.mode))},
          {"final_project", c.final_project},
          {"C", c.projection.C},
          {"pi_base", c.pi_base},
          {"train", to_json(c.train)}};
}

inline DistillConfig distill_config_from_json(const nlohmann::json& j) {
  DistillConfig c;
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "distill")
    c.mode = DistillMode::distill;
  else if (mode == "no-distill")
    c.mode = DistillMode::no_distill;
  else
    throw ValidationError("unknown distillation mode '" + mode + "'");
  c.final_project = j.at("final_project").get<bool>();
  c.projection.C = j.at("C").get<double>();
  c.pi_base = j.at("pi_base").get<double>();
  c.train = train_config_from_json(j.at("train"));
  return c;
}

namespace detail {

template <class M>
nlohmann::json tensor_json(const M& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  // Both Matrix (row-major) and Vector store contiguously in row-major order.
  std::copy(m.data(), m.data() + m.size(), data.begin());
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

template <class M>
M tensor_from_json(const nlohmann::json& j, const char* name) {
  const auto shape = j.at("shape").get<std::vector<Eigen::Index>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] * shape[1] != static_cast<Eigen::Index>(data.size()))
    throw ValidationError(std::string("checkpoint tensor '") + name + "' has inconsistent shape");
  M m;
  if constexpr (M::ColsAtCompileTime == 1) {
    if (shape[1] != 1) throw ValidationError(std::string("checkpoint tensor '") + name + "' must be a column");
    m.resize(shape[0]);
  } else {
    m.resize(shape[0], shape[1]);
  }
  std::copy(data.begin(), data.end(), m.data());
  return m;
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const ModelParams& p, const DistillConfig& cfg) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& c : p.conv)
    conv.push_back({{"width", c.width}, {"weight", detail::tensor_json(c.weight)}, {"bias", detail::tensor_json(c.bias)}});
  return {{"format", kCheckpointFormat},
          {"config", to_json(cfg)},
          {"shape", {{"input_dim", p.shape.input_dim}, {"widths", p.shape.widths}, {"maps", p.shape.maps}}},
          {"vocab", p.vocab.words()},
          {"embeddings_trainable", p.embeddings_trainable},
          {"embedding", detail::tensor_json(p.embedding)},
          {"conv", std::move(conv)},
          {"dense_w", detail::tensor_json(p.dense_w)},
          {"dense_b", detail::tensor_json(p.dense_b)}};
}

struct Checkpoint {
  ModelParams params;
  DistillConfig config;
};

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat)
      throw ValidationError("unsupported checkpoint format");
    Checkpoint ck;
    ck.config = distill_config_from_json(j.at("config"));
    auto& p = ck.params;
    const auto& s = j.at("shape");
    p.shape.input_dim = s.at("input_dim").get<std::size_t>();
    p.shape.widths = s.at("widths").get<std::vector<std::size_t>>();
    p.shape.maps = s.at("maps").get<std::size_t>();
    for (const auto& w : j.at("vocab").get<std::vector<std::string>>()) p.vocab.add(w);
    p.embeddings_trainable = j.at("embeddings_trainable").get<bool>();
    p.embedding = detail::tensor_from_json<Matrix>(j.at("embedding"), "embedding");
    for (const auto& c : j.at("conv"))
      p.conv.push_back({c.at("width").get<std::size_t>(), detail::tensor_from_json<Matrix>(c.at("weight"), "conv.weight"),
                        detail::tensor_from_json<Vector>(c.at("bias"), "conv.bias")});
    p.dense_w = detail::tensor_from_json<Matrix>(j.at("dense_w"), "dense_w");
    p.dense_b = detail::tensor_from_json<Vector>(j.at("dense_b"), "dense_b");

    const auto d = static_cast<Eigen::Index>(p.shape.input_dim);
    const auto maps = static_cast<Eigen::Index>(p.shape.maps);
    if (p.conv.size() != p.shape.widths.size()) throw ValidationError("conv layer count does not match widths");
    for (std::size_t i = 0; i < p.conv.size(); ++i) {
      const auto& c = p.conv[i];
      if (c.width != p.shape.widths[i] || c.weight.rows() != static_cast<Eigen::Index>(c.width) * d ||
          c.weight.cols() != maps || c.bias.size() != maps)
        throw ValidationError("conv layer " + std::to_string(i) + " has inconsistent shape");
    }
    if (p.dense_w.rows() != 2 || p.dense_w.cols() != static_cast<Eigen::Index>(p.shape.total_maps()) ||
        p.dense_b.size() != 2)
      throw ValidationError("dense layer has inconsistent shape");
    if (p.embedding.size() != 0 &&
        (p.embedding.rows() != static_cast<Eigen::Index>(p.vocab.size()) || p.embedding.cols() != d))
      throw ValidationError("embedding table has inconsistent shape");
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(std::ostream& os, const ModelParams& p, const DistillConfig& cfg) {
  os << checkpoint_json(p, cfg).dump() << '\n';
}

inline Checkpoint load_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace rulesent
