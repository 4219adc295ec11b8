#pragma once

// MNIST IDX ingestion, normalization, one-hot targets and the XOR set.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "twopass/core.hpp"

namespace twopass {

inline constexpr std::uint32_t kIdxMagicLabels = 0x00000801;
inline constexpr std::uint32_t kIdxMagicImages = 0x00000803;

/// Raw IDX payload: dimension sizes plus unsigned bytes in row-major order.
struct IdxTensor {
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> data;

  std::size_t count() const { return dims.empty() ? 0 : dims.front(); }
  bool operator==(const IdxTensor&) const = default;
};

/// Reads an unsigned-byte IDX file (labels 0x801 or images 0x803). Files
/// whose name ends in ".gz" are decompressed transparently.
IdxTensor load_idx(const std::filesystem::path& path);

/// Writes an IDX file; gzip-compressed when the name ends in ".gz".
void write_idx(const std::filesystem::path& path, const IdxTensor& tensor);

/// Parses an in-memory IDX image.
IdxTensor parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>");

/// Bytes / 255 with each sample flattened row-major (pixel (r, c) -> r * cols + c).
Matrix<double> normalize(const IdxTensor& raw);

Matrix<double> one_hot(const std::vector<int>& labels, int classes);

struct Dataset {
  Matrix<double> inputs;   // N x d
  Matrix<double> targets;  // N x c
  std::vector<int> labels; // empty for regression tasks

  std::size_t size() const { return static_cast<std::size_t>(inputs.rows()); }
  Eigen::Index input_dim() const { return inputs.cols(); }
  Eigen::Index target_dim() const { return targets.cols(); }
  bool is_classification() const { return !labels.empty(); }

  /// Throws DataError when the fields disagree on N.
  void validate() const;

  /// Leading `n` samples (or all when n >= size()).
  Dataset head(std::size_t n) const;
};

/// Builds a classification dataset from an image/label IDX pair.
Dataset make_dataset(const IdxTensor& images, const IdxTensor& labels, int classes = 10);

/// The four-sample XOR truth table: two inputs, one scalar target.
Dataset xor_dataset();

struct MnistSplits {
  Dataset train;
  Dataset test;
};

/// Locates and loads the standard MNIST files under `dir`. Both the
/// "train-images-idx3-ubyte" and "train-images.idx3-ubyte" spellings are
/// accepted, optionally with a ".gz" suffix.
MnistSplits load_mnist(const std::filesystem::path& dir);

}  // namespace twopass
