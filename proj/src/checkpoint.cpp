#include "extraction_lab/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace extraction_lab {

using nlohmann::json;

std::string checkpoint_to_string(const Network& net) {
  json doc;
  doc["version"] = "v1";
  doc["spec"] = {{"input_dim", net.spec.input_dim},
                 {"hidden_sizes", net.spec.hidden_sizes},
                 {"num_classes", net.spec.num_classes},
                 {"activation", "relu"}};
  json weights = json::array(), biases = json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const auto& w = net.weights[l];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) flat.push_back(w(i, j));
    weights.push_back(flat);
    biases.push_back(std::vector<double>(net.biases[l].data(), net.biases[l].data() + net.biases[l].size()));
  }
  doc["weights"] = std::move(weights);
  doc["biases"] = std::move(biases);
  return doc.dump();
}

Network checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint: not a valid document: ") + e.what());
  }
  try {
    if (doc.at("version").get<std::string>() != "v1") throw CheckpointError("checkpoint: unsupported version");
    const auto& js = doc.at("spec");
    NetworkSpec spec;
    spec.input_dim = js.at("input_dim").get<int>();
    spec.hidden_sizes = js.at("hidden_sizes").get<std::vector<int>>();
    spec.num_classes = js.at("num_classes").get<int>();
    if (js.at("activation").get<std::string>() != "relu") throw CheckpointError("checkpoint: unsupported activation");
    try {
      spec.validate();
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }

    auto net = Network::zeros(spec);
    const auto& jw = doc.at("weights");
    const auto& jb = doc.at("biases");
    if (jw.size() != net.weights.size() || jb.size() != net.biases.size())
      throw CheckpointError("checkpoint: layer count does not match spec");
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      auto flat = jw[l].get<std::vector<double>>();
      auto bias = jb[l].get<std::vector<double>>();
      auto& w = net.weights[l];
      if (flat.size() != static_cast<std::size_t>(w.size()) || bias.size() != static_cast<std::size_t>(net.biases[l].size()))
        throw CheckpointError("checkpoint: layer " + std::to_string(l) + " has wrong parameter count");
      std::size_t k = 0;
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = flat[k++];
      for (std::size_t i = 0; i < bias.size(); ++i) net.biases[l](static_cast<Eigen::Index>(i)) = bias[i];
    }
    if (!net.all_finite()) throw CheckpointError("checkpoint: non-finite parameter");
    return net;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: malformed document: ") + e.what());
  }
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  out << checkpoint_to_string(net) << '\n';
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace extraction_lab
