#pragma once

// JSON model documents:
//   {"layers": [{"in": 784, "out": 256, "activation": "relu", "weights": [row-major ...]}, ...]}
// Column-split models add {"colsplit": {"side": 28, "axis": "columns"}}.

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "twopass/colsplit.hpp"
#include "twopass/core.hpp"

namespace twopass {

nlohmann::json to_json(const Network<double>& net);
Network<double> network_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ColumnSplitNet& net);

struct LoadedModel {
  Network<double> network;               // composed form for column-split models
  std::optional<SplitAxis> colsplit_axis; // set for column-split models
};

LoadedModel model_from_json(const nlohmann::json& j);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace twopass
