#include "twopass/colsplit.hpp"

namespace twopass {

std::vector<Vector<double>> split_columns(const Matrix<double>& image) {
  if (image.rows() != kImageSide || image.cols() != kImageSide)
    throw ShapeError("split_columns expects a " + std::to_string(kImageSide) + "x" + std::to_string(kImageSide) +
                     " image, got " + std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  std::vector<Vector<double>> columns;
  columns.reserve(static_cast<std::size_t>(image.cols()));
  for (Eigen::Index c = 0; c < image.cols(); ++c) columns.emplace_back(image.col(c));
  return columns;
}

Matrix<double> reassemble_columns(const std::vector<Vector<double>>& columns) {
  if (columns.empty()) throw ShapeError("reassemble_columns: no columns");
  const auto rows = columns.front().size();
  Matrix<double> image(rows, static_cast<Eigen::Index>(columns.size()));
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].size() != rows) throw ShapeError("reassemble_columns: ragged columns");
    image.col(static_cast<Eigen::Index>(c)) = columns[c];
  }
  return image;
}

Matrix<double> split_order(const Matrix<double>& flat_images, SplitAxis axis, Eigen::Index side) {
  if (flat_images.cols() != side * side)
    throw ShapeError("split_order: expected " + std::to_string(side * side) + " pixels per image, got " +
                     std::to_string(flat_images.cols()));
  if (axis == SplitAxis::Rows) return flat_images;
  Matrix<double> out(flat_images.rows(), flat_images.cols());
  for (Eigen::Index n = 0; n < flat_images.rows(); ++n)
    for (Eigen::Index r = 0; r < side; ++r)
      for (Eigen::Index c = 0; c < side; ++c) out(n, c * side + r) = flat_images(n, r * side + c);
  return out;
}

ColumnSplitNet ColumnSplitNet::create(const ColumnSplitConfig& cfg, std::uint64_t seed) {
  if (cfg.side < 1 || cfg.outputs_per_column < 1 || cfg.classes < 1)
    throw ConfigError("column split dimensions must be positive");
  ColumnSplitNet net;
  net.axis = cfg.axis;
  for (Eigen::Index j = 0; j < cfg.side; ++j)
    net.column_nets.push_back(make_network<double>({{cfg.side, cfg.outputs_per_column, ActivationKind::ReLU}},
                                                   derive_seed(seed, static_cast<std::uint64_t>(j))));
  net.aggregator = make_network<double>(
      {{cfg.side * cfg.outputs_per_column, cfg.classes, ActivationKind::Softmax}}, derive_seed(seed, 1000));
  return net;
}

void ColumnSplitNet::validate() const {
  if (column_nets.empty()) throw ShapeError("column split network has no column networks");
  const auto side = this->side();
  const auto width = column_nets.front().output_dim();
  for (const auto& c : column_nets) {
    if (c.depth() != 1 || c.input_dim() != side || c.output_dim() != width)
      throw ShapeError("every column network must be a single " + std::to_string(side) + "->" +
                       std::to_string(width) + " layer");
  }
  if (aggregator.depth() == 0 || aggregator.input_dim() != side * width)
    throw ShapeError("aggregator must take " + std::to_string(side * width) + " inputs");
}

Batch<double> ColumnSplitNet::forward_stagewise(const Batch<double>& ordered_inputs) const {
  validate();
  const auto side = this->side();
  const auto width = outputs_per_column();
  if (ordered_inputs.rows() != side * side) throw ShapeError("forward_stagewise: input dimension mismatch");
  Batch<double> hidden(side * width, ordered_inputs.cols());
  for (Eigen::Index j = 0; j < side; ++j) {
    const auto trace = forward(column_nets[static_cast<std::size_t>(j)], ordered_inputs.middleRows(j * side, side));
    hidden.middleRows(j * width, width) = trace.output();
  }
  return forward(aggregator, hidden).output();
}

Network<double> compose(const ColumnSplitNet& net) {
  net.validate();
  const auto side = net.side();
  const auto width = net.outputs_per_column();
  Matrix<double> first = Matrix<double>::Zero(side * width, side * side);
  for (Eigen::Index j = 0; j < side; ++j)
    first.block(j * width, j * side, width, side) = net.column_nets[static_cast<std::size_t>(j)].weights(0);
  std::vector<Layer<double>> layers{{std::move(first), ActivationKind::ReLU}};
  for (const auto& layer : net.aggregator.layers()) layers.push_back(layer);
  return Network<double>(std::move(layers));
}

ColumnSplitNet decompose(const Network<double>& composed, Eigen::Index side, SplitAxis axis) {
  if (composed.depth() < 2) throw ShapeError("decompose: composed network needs at least two layers");
  const auto& first = composed.weights(0);
  if (first.cols() != side * side || first.rows() % side != 0)
    throw ShapeError("decompose: first layer is not a column-split layer");
  const auto width = first.rows() / side;
  const auto mask = block_mask(side, width);
  if (((mask.array() == 0.0) && (first.array() != 0.0)).any())
    throw ShapeError("decompose: first layer has non-zero off-block entries");
  ColumnSplitNet net;
  net.axis = axis;
  for (Eigen::Index j = 0; j < side; ++j)
    net.column_nets.emplace_back(std::vector<Layer<double>>{
        {Matrix<double>(first.block(j * width, j * side, width, side)), composed.layer(0).activation}});
  std::vector<Layer<double>> rest(composed.layers().begin() + 1, composed.layers().end());
  net.aggregator = Network<double>(std::move(rest));
  return net;
}

Matrix<double> block_mask(Eigen::Index side, Eigen::Index outputs_per_column) {
  Matrix<double> mask = Matrix<double>::Zero(side * outputs_per_column, side * side);
  for (Eigen::Index j = 0; j < side; ++j) mask.block(j * outputs_per_column, j * side, outputs_per_column, side).setOnes();
  return mask;
}

std::function<void(UpdateSet<double>&)> block_mask_filter(Eigen::Index side, Eigen::Index outputs_per_column) {
  return [side, outputs_per_column](UpdateSet<double>& updates) {
    auto& d = updates.delta_w.at(0);
    if (d.rows() != side * outputs_per_column || d.cols() != side * side)
      throw ShapeError("block mask does not match the first-layer update");
    for (Eigen::Index j = 0; j < side; ++j) {
      const Eigen::Index row0 = j * outputs_per_column;
      if (j * side > 0) d.block(row0, 0, outputs_per_column, j * side).setZero();
      const Eigen::Index after = (j + 1) * side;
      if (after < d.cols()) d.block(row0, after, outputs_per_column, d.cols() - after).setZero();
    }
  };
}

ColumnSplitTrainResult colsplit_train(const ColumnSplitNet& net, const Dataset& data,
                                      const ProjectionMatrix<double>& projection, const TrainConfig& cfg,
                                      TrainHooks<double> hooks) {
  net.validate();
  const auto side = net.side();
  Dataset ordered;
  ordered.inputs = split_order(data.inputs, net.axis, side);
  ordered.targets = data.targets;
  ordered.labels = data.labels;
  hooks.filter_updates = block_mask_filter(side, net.outputs_per_column());
  auto result = train(compose(net), ordered, projection, cfg, hooks);
  return {decompose(result.network, side, net.axis), std::move(result.history)};
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions, const std::vector<int>& truth, int classes) {
  if (predictions.size() != truth.size())
    throw ShapeError("confusion_matrix: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  ConfusionMatrix m = ConfusionMatrix::Zero(classes, classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predictions[i];
    if (t < 0 || t >= classes || p < 0 || p >= classes)
      throw DataError("confusion_matrix: label out of range 0.." + std::to_string(classes - 1) + " at sample " +
                      std::to_string(i));
    ++m(t, p);
  }
  return m;
}

bool diagonally_dominant(const ConfusionMatrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (j != i && m(i, j) >= m(i, i)) return false;
  return true;
}

}  // namespace twopass
