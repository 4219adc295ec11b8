#include "twopass/data.hpp"

#include <zlib.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace twopass {
namespace {

bool is_gzip_name(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  if (is_gzip_name(path)) {
    gzFile file = gzopen(path.c_str(), "rb");
    if (file == nullptr) throw DataError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes;
    std::array<std::uint8_t, 1 << 16> chunk{};
    int got = 0;
    while ((got = gzread(file, chunk.data(), static_cast<unsigned>(chunk.size()))) > 0)
      bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + got);
    int errnum = Z_OK;
    const std::string message = got < 0 ? gzerror(file, &errnum) : "";
    gzclose(file);
    if (got < 0) throw DataError("gzip error in '" + path.string() + "': " + message);
    return bytes;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxTensor parse_idx(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 4) throw DataError(origin + ": size mismatch: expected at least 4 header bytes, got " +
                                        std::to_string(bytes.size()));
  const std::uint32_t magic = read_be32(bytes, 0);
  std::size_t rank = 0;
  if (magic == kIdxMagicLabels) {
    rank = 1;
  } else if (magic == kIdxMagicImages) {
    rank = 3;
  } else {
    char hex[11];
    std::snprintf(hex, sizeof(hex), "0x%08X", magic);
    throw DataError(origin + ": unrecognized IDX magic " + hex);
  }
  const std::size_t header = 4 + 4 * rank;
  if (bytes.size() < header)
    throw DataError(origin + ": size mismatch: expected " + std::to_string(header) + " header bytes, got " +
                    std::to_string(bytes.size()));
  IdxTensor tensor;
  std::size_t payload = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    tensor.dims.push_back(read_be32(bytes, 4 + 4 * d));
    payload *= tensor.dims.back();
  }
  if (bytes.size() != header + payload)
    throw DataError(origin + ": size mismatch: expected " + std::to_string(header + payload) + " bytes, got " +
                    std::to_string(bytes.size()));
  tensor.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return tensor;
}

IdxTensor load_idx(const std::filesystem::path& path) { return parse_idx(read_file(path), path.string()); }

void write_idx(const std::filesystem::path& path, const IdxTensor& tensor) {
  std::uint32_t magic = 0;
  if (tensor.dims.size() == 1) {
    magic = kIdxMagicLabels;
  } else if (tensor.dims.size() == 3) {
    magic = kIdxMagicImages;
  } else {
    throw DataError("write_idx: only rank 1 and rank 3 tensors are supported");
  }
  std::size_t payload = 1;
  for (auto d : tensor.dims) payload *= d;
  if (payload != tensor.data.size()) throw DataError("write_idx: dims do not match data length");

  std::vector<std::uint8_t> bytes;
  append_be32(bytes, magic);
  for (auto d : tensor.dims) append_be32(bytes, d);
  bytes.insert(bytes.end(), tensor.data.begin(), tensor.data.end());

  if (is_gzip_name(path)) {
    gzFile file = gzopen(path.c_str(), "wb");
    if (file == nullptr) throw DataError("cannot write '" + path.string() + "'");
    const int wrote = gzwrite(file, bytes.data(), static_cast<unsigned>(bytes.size()));
    gzclose(file);
    if (wrote != static_cast<int>(bytes.size())) throw DataError("short gzip write to '" + path.string() + "'");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

Matrix<double> normalize(const IdxTensor& raw) {
  if (raw.dims.empty()) return {};
  const auto count = static_cast<Eigen::Index>(raw.dims.front());
  const auto width = count == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(raw.data.size()) / count;
  Matrix<double> out(count, width);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<double>(raw.data[static_cast<std::size_t>(i)]) / 255.0;
  return out;
}

Matrix<double> one_hot(const std::vector<int>& labels, int classes) {
  if (classes < 1) throw ShapeError("one_hot: class count must be positive");
  Matrix<double> out = Matrix<double>::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw DataError("one_hot: label " + std::to_string(labels[i]) + " outside 0.." + std::to_string(classes - 1));
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return out;
}

void Dataset::validate() const {
  if (targets.rows() != inputs.rows())
    throw DataError("dataset has " + std::to_string(inputs.rows()) + " inputs but " + std::to_string(targets.rows()) +
                    " targets");
  if (!labels.empty() && labels.size() != size())
    throw DataError("dataset has " + std::to_string(inputs.rows()) + " inputs but " + std::to_string(labels.size()) +
                    " labels");
}

Dataset Dataset::head(std::size_t n) const {
  if (n >= size()) return *this;
  const auto rows = static_cast<Eigen::Index>(n);
  Dataset out;
  out.inputs = inputs.topRows(rows);
  out.targets = targets.topRows(rows);
  if (!labels.empty()) out.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

Dataset make_dataset(const IdxTensor& images, const IdxTensor& labels, int classes) {
  if (images.dims.size() != 3) throw DataError("image file must have 3 dimensions");
  if (labels.dims.size() != 1) throw DataError("label file must have 1 dimension");
  if (images.count() != labels.count())
    throw DataError("image count " + std::to_string(images.count()) + " does not match label count " +
                    std::to_string(labels.count()));
  Dataset ds;
  ds.inputs = normalize(images);
  ds.labels.assign(labels.data.begin(), labels.data.end());
  ds.targets = one_hot(ds.labels, classes);
  return ds;
}

Dataset xor_dataset() {
  Dataset ds;
  ds.inputs.resize(4, 2);
  ds.inputs << 0, 0,
               0, 1,
               1, 0,
               1, 1;
  ds.targets.resize(4, 1);
  ds.targets << 0, 1, 1, 0;
  return ds;
}

namespace {

std::filesystem::path find_mnist_file(const std::filesystem::path& dir, const std::string& stem,
                                      const std::string& kind) {
  for (const std::string sep : {"-", "."}) {
    for (const std::string suffix : {"", ".gz"}) {
      auto candidate = dir / (stem + sep + kind + suffix);
      if (std::filesystem::exists(candidate)) return candidate;
    }
  }
  throw DataError("MNIST file '" + stem + "-" + kind + "' not found in '" + dir.string() + "'");
}

Dataset load_split(const std::filesystem::path& dir, const std::string& prefix, std::size_t expected) {
  const auto images = load_idx(find_mnist_file(dir, prefix + "-images", "idx3-ubyte"));
  const auto labels = load_idx(find_mnist_file(dir, prefix + "-labels", "idx1-ubyte"));
  if (images.dims.size() != 3 || images.dims[1] != 28 || images.dims[2] != 28)
    throw DataError("MNIST " + prefix + " images are not 28x28");
  if (images.count() != expected)
    throw DataError("MNIST " + prefix + " split has " + std::to_string(images.count()) + " images, expected " +
                    std::to_string(expected));
  for (auto label : labels.data)
    if (label > 9) throw DataError("MNIST " + prefix + " label " + std::to_string(label) + " outside 0..9");
  return make_dataset(images, labels, 10);
}

}  // namespace

MnistSplits load_mnist(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("MNIST directory '" + dir.string() + "' does not exist");
  return {load_split(dir, "train", 60000), load_split(dir, "t10k", 10000)};
}

}  // namespace twopass
