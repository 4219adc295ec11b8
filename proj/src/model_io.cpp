#include "twopass/model_io.hpp"

#include <fstream>

namespace twopass {

nlohmann::json to_json(const Network<double>& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers()) {
    const auto& w = layer.weights;
    layers.push_back({{"in", w.cols()},
                      {"out", w.rows()},
                      {"activation", std::string(to_string(layer.activation))},
                      {"weights", std::vector<double>(w.data(), w.data() + w.size())}});
  }
  return {{"layers", std::move(layers)}};
}

Network<double> network_from_json(const nlohmann::json& j) {
  try {
    std::vector<Layer<double>> layers;
    for (const auto& entry : j.at("layers")) {
      const auto in = entry.at("in").get<Eigen::Index>();
      const auto out = entry.at("out").get<Eigen::Index>();
      if (in < 1 || out < 1) throw DataError("model layer has non-positive dimensions");
      const auto values = entry.at("weights").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != in * out)
        throw DataError("model layer " + std::to_string(layers.size() + 1) + " has " + std::to_string(values.size()) +
                        " weights, expected " + std::to_string(in * out));
      Matrix<double> w = Eigen::Map<const Matrix<double>>(values.data(), out, in);
      layers.push_back({std::move(w), activation_from_string(entry.at("activation").get<std::string>())});
    }
    return Network<double>(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model document: ") + e.what());
  }
}

nlohmann::json to_json(const ColumnSplitNet& net) {
  auto j = to_json(compose(net));
  j["colsplit"] = {{"side", net.side()}, {"axis", std::string(to_string(net.axis))}};
  return j;
}

LoadedModel model_from_json(const nlohmann::json& j) {
  LoadedModel model{network_from_json(j), std::nullopt};
  if (j.contains("colsplit")) {
    const auto axis = split_axis_from_string(j["colsplit"].at("axis").get<std::string>());
    // decompose validates the block structure
    decompose(model.network, j["colsplit"].at("side").get<Eigen::Index>(), axis);
    model.colsplit_axis = axis;
  }
  return model;
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace twopass
