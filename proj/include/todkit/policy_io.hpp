#pragma once

#include <fstream>

#include "todkit/harness.hpp"
#include "todkit/policy.hpp"

namespace todkit {

// Checkpoint container: named parameter tensors per model, optimizer state,
// feature-layout version and the ontology fingerprint. JSON keeps doubles at
// full round-trip precision, so save -> load -> save is byte-identical.

namespace detail {

inline Json tensor_to_json(const nn::Mat& m) {
  Json j;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  j["data"] = m.w;
  return j;
}

inline Json vec_to_json(const nn::Vec& v) {
  Json j;
  j["rows"] = static_cast<int>(v.size());
  j["cols"] = 1;
  j["data"] = v;
  return j;
}

inline void tensor_from_json(const Json& j, nn::Mat& m) {
  m.rows = j.at("rows").get<int>();
  m.cols = j.at("cols").get<int>();
  m.w = j.at("data").get<nn::Vec>();
  if (m.w.size() != static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols))
    throw std::runtime_error("checkpoint: tensor size mismatch");
}

inline void vec_from_json(const Json& j, nn::Vec& v) {
  v = j.at("data").get<nn::Vec>();
}

inline Json dense_to_json(const nn::DenseLayer& l) {
  Json j;
  j["weight"] = tensor_to_json(l.weight);
  j["bias"] = vec_to_json(l.bias);
  return j;
}

inline void dense_from_json(const Json& j, nn::DenseLayer& l) {
  tensor_from_json(j.at("weight"), l.weight);
  vec_from_json(j.at("bias"), l.bias);
  if (static_cast<int>(l.bias.size()) != l.weight.rows)
    throw std::runtime_error("checkpoint: bias size mismatch");
}

}  // namespace detail

inline Json policy_to_json(const Policy& p, const std::vector<nn::AdamState>* adam = nullptr,
                           long step = 0) {
  Json doc;
  doc["format"] = 1;
  doc["layout"] = kFeatureLayoutVersion;
  doc["kind"] = std::string(to_string(p.kind));
  doc["ontology_hash"] = p.ont_hash;
  doc["hidden_gnn"] = p.hidden_gnn;
  doc["hidden_mlp"] = p.hidden_mlp;
  doc["step"] = step;
  Json models = Json::array();
  for (std::size_t m = 0; m < p.model_names.size(); ++m) {
    Json jm;
    jm["name"] = p.model_names[m];
    Json tensors;
    if (kind_is_gnn(p.kind)) {
      const GnnWeights& w = p.gnns[m];
      tensors["input_i"] = detail::dense_to_json(w.input_i);
      tensors["input_s"] = detail::dense_to_json(w.input_s);
      tensors["msg_s2s"] = detail::dense_to_json(w.msg_s2s);
      tensors["msg_i2s"] = detail::dense_to_json(w.msg_i2s);
      tensors["msg_s2i"] = detail::dense_to_json(w.msg_s2i);
      tensors["read_i"] = detail::dense_to_json(w.read_i);
      tensors["read_s"] = detail::dense_to_json(w.read_s);
    } else {
      const MlpParams& mlp = p.mlps[m];
      tensors["l1"] = detail::dense_to_json(mlp.l1);
      tensors["l2"] = detail::dense_to_json(mlp.l2);
      tensors["l3"] = detail::dense_to_json(mlp.l3);
    }
    jm["tensors"] = std::move(tensors);
    models.push_back(std::move(jm));
  }
  doc["models"] = std::move(models);
  if (adam) {
    Json jadam = Json::array();
    for (const nn::AdamState& a : *adam) {
      Json ja;
      ja["step"] = a.step;
      ja["m"] = a.m;
      ja["v"] = a.v;
      jadam.push_back(std::move(ja));
    }
    doc["adam"] = std::move(jadam);
  }
  return doc;
}

inline Policy policy_from_json(const Json& doc, const Ontology& ont,
                               std::vector<nn::AdamState>* adam = nullptr) {
  if (doc.at("layout").get<std::string>() != kFeatureLayoutVersion)
    throw std::runtime_error("checkpoint: feature layout version mismatch: got '" +
                             doc.at("layout").get<std::string>() + "', want '" +
                             kFeatureLayoutVersion + "'");
  if (doc.at("ontology_hash").get<std::uint64_t>() != ontology_hash(ont))
    throw std::runtime_error("checkpoint: ontology mismatch");
  PolicyKind kind = policy_kind_from_string(doc.at("kind").get<std::string>());
  RngStream rng(0);
  Policy p = make_policy(kind, ont, rng, doc.at("hidden_gnn").get<int>(),
                         doc.at("hidden_mlp").get<int>());
  const Json& models = doc.at("models");
  if (models.size() != p.model_names.size())
    throw std::runtime_error("checkpoint: model count mismatch");
  for (std::size_t m = 0; m < models.size(); ++m) {
    const Json& tensors = models[m].at("tensors");
    if (kind_is_gnn(kind)) {
      GnnWeights& w = p.gnns[m];
      detail::dense_from_json(tensors.at("input_i"), w.input_i);
      detail::dense_from_json(tensors.at("input_s"), w.input_s);
      detail::dense_from_json(tensors.at("msg_s2s"), w.msg_s2s);
      detail::dense_from_json(tensors.at("msg_i2s"), w.msg_i2s);
      detail::dense_from_json(tensors.at("msg_s2i"), w.msg_s2i);
      detail::dense_from_json(tensors.at("read_i"), w.read_i);
      detail::dense_from_json(tensors.at("read_s"), w.read_s);
    } else {
      MlpParams& mlp = p.mlps[m];
      detail::dense_from_json(tensors.at("l1"), mlp.l1);
      detail::dense_from_json(tensors.at("l2"), mlp.l2);
      detail::dense_from_json(tensors.at("l3"), mlp.l3);
    }
  }
  if (adam && doc.contains("adam")) {
    adam->clear();
    for (const Json& ja : doc.at("adam")) {
      nn::AdamState a;
      a.step = ja.at("step").get<long>();
      a.m = ja.at("m").get<std::vector<nn::Vec>>();
      a.v = ja.at("v").get<std::vector<nn::Vec>>();
      adam->push_back(std::move(a));
    }
  }
  return p;
}

inline void save_checkpoint(const Policy& p, const std::string& path,
                            const std::vector<nn::AdamState>* adam = nullptr, long step = 0) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  out << policy_to_json(p, adam, step).dump() << "\n";
}

inline Policy load_checkpoint(const std::string& path, const Ontology& ont,
                              std::vector<nn::AdamState>* adam = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  Json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint: invalid JSON in '" + path + "': " + e.what());
  }
  return policy_from_json(doc, ont, adam);
}

}  // namespace todkit
