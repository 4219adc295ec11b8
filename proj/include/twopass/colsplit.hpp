#pragma once

// Column-split CNN equivalent: each image column feeds its own small
// ReLU network, and the concatenated column outputs feed a softmax
// aggregator. The column networks compose into one block-diagonal layer, so
// both training algorithms apply to the composed two-layer network as is.

#include <cstdint>
#include <vector>

#include "twopass/core.hpp"
#include "twopass/data.hpp"
#include "twopass/modulation.hpp"
#include "twopass/trainer.hpp"

namespace twopass {

inline constexpr Eigen::Index kImageSide = 28;

enum class SplitAxis { Columns, Rows };

inline std::string_view to_string(SplitAxis a) { return a == SplitAxis::Columns ? "columns" : "rows"; }

inline SplitAxis split_axis_from_string(std::string_view s) {
  if (s == "columns") return SplitAxis::Columns;
  if (s == "rows") return SplitAxis::Rows;
  throw ConfigError("unknown split axis '" + std::string(s) + "' (expected columns or rows)");
}

/// Column j of a side x side image, top to bottom, for every j.
std::vector<Vector<double>> split_columns(const Matrix<double>& image);

/// Inverse of split_columns.
Matrix<double> reassemble_columns(const std::vector<Vector<double>>& columns);

/// Reorders row-major flattened images (one per row) into the concatenation
/// of their split segments. Rows split is the identity.
Matrix<double> split_order(const Matrix<double>& flat_images, SplitAxis axis, Eigen::Index side = kImageSide);

struct ColumnSplitConfig {
  Eigen::Index side = kImageSide;
  Eigen::Index outputs_per_column = kImageSide;
  Eigen::Index classes = 10;
  SplitAxis axis = SplitAxis::Columns;
};

struct ColumnSplitNet {
  std::vector<Network<double>> column_nets;  // side of them, each side -> outputs_per_column, ReLU
  Network<double> aggregator;                // side * outputs_per_column -> classes, softmax
  SplitAxis axis = SplitAxis::Columns;

  static ColumnSplitNet create(const ColumnSplitConfig& cfg, std::uint64_t seed);

  Eigen::Index side() const { return static_cast<Eigen::Index>(column_nets.size()); }
  Eigen::Index outputs_per_column() const { return column_nets.front().output_dim(); }

  void validate() const;

  /// Stage-wise evaluation on already split-ordered inputs (one per column):
  /// each segment through its own network, concatenation, aggregator.
  Batch<double> forward_stagewise(const Batch<double>& ordered_inputs) const;
};

/// Two-layer network: block-diagonal first layer (ReLU) then the aggregator.
Network<double> compose(const ColumnSplitNet& net);

/// Recovers the per-column networks from a composed network. Throws
/// ShapeError when the first layer has non-zero off-block entries.
ColumnSplitNet decompose(const Network<double>& composed, Eigen::Index side, SplitAxis axis);

/// 1 on the diagonal blocks, 0 elsewhere.
Matrix<double> block_mask(Eigen::Index side, Eigen::Index outputs_per_column);

/// Update filter that zeroes every off-block entry of the first layer.
std::function<void(UpdateSet<double>&)> block_mask_filter(Eigen::Index side, Eigen::Index outputs_per_column);

struct ColumnSplitTrainResult {
  ColumnSplitNet network;
  MetricsHistory history;
};

/// Trains the composed network. `data` holds row-major flattened images; the
/// split reordering happens here. Hooks other than filter_updates are passed
/// through to train().
ColumnSplitTrainResult colsplit_train(const ColumnSplitNet& net, const Dataset& data,
                                      const ProjectionMatrix<double>& projection, const TrainConfig& cfg,
                                      TrainHooks<double> hooks = {});

using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Entry (i, j) counts samples of true class i predicted as j.
ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& truth, int classes = 10);

/// True when every diagonal entry is the strict maximum of its row.
bool diagonally_dominant(const ConfusionMatrix& m);

}  // namespace twopass
