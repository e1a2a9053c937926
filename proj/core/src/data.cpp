#include "tprop/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

namespace tprop {

namespace {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("io-error: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in,
                                 const std::string& path) {
  z_stream zs{};
  if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoError("io-error: zlib init failed");
  std::vector<std::uint8_t> out;
  out.reserve(in.size() * 4);
  std::uint8_t buf[1 << 16];
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  do {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw IoError("io-error: corrupt gzip stream in " + path);
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
  } while (rc != Z_STREAM_END);
  inflateEnd(&zs);
  return out;
}

// Reads a file, inflating it first when the gzip magic is present.
std::vector<std::uint8_t> read_maybe_gzip(const std::string& path) {
  auto bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
    return gunzip(bytes, path);
  return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t off,
                        const std::string& path) {
  if (off + 4 > b.size()) throw IoError("io-error: truncated header in " + path);
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

void append_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.push_back(std::uint8_t(v >> 24));
  b.push_back(std::uint8_t(v >> 16));
  b.push_back(std::uint8_t(v >> 8));
  b.push_back(std::uint8_t(v));
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("io-error: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("io-error: short write to " + path);
}

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

}  // namespace

Dataset Dataset::head(Index n) const {
  Dataset out;
  n = std::min(n, size());
  out.inputs = inputs.topRows(n);
  out.labels.assign(labels.begin(), labels.begin() + n);
  out.num_classes = num_classes;
  return out;
}

void Dataset::validate() const {
  if (inputs.rows() != static_cast<Index>(labels.size()))
    throw FormatError("consistency-error: " + std::to_string(inputs.rows()) +
                      " inputs vs " + std::to_string(labels.size()) + " labels");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw FormatError("consistency-error: label " + std::to_string(y) +
                        " outside [0, " + std::to_string(num_classes) + ")");
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  auto img = read_maybe_gzip(images_path);
  auto lab = read_maybe_gzip(labels_path);

  if (read_be32(img, 0, images_path) != kIdxImages)
    throw FormatError("format-error: bad image magic in " + images_path);
  if (read_be32(lab, 0, labels_path) != kIdxLabels)
    throw FormatError("format-error: bad label magic in " + labels_path);

  const std::uint32_t n_img = read_be32(img, 4, images_path);
  const std::uint32_t rows = read_be32(img, 8, images_path);
  const std::uint32_t cols = read_be32(img, 12, images_path);
  const std::uint32_t n_lab = read_be32(lab, 4, labels_path);
  if (n_img != n_lab)
    throw FormatError("consistency-error: " + std::to_string(n_img) + " images vs " +
                      std::to_string(n_lab) + " labels");

  const std::size_t pixels = std::size_t(rows) * cols;
  if (img.size() < 16 + std::size_t(n_img) * pixels)
    throw IoError("io-error: truncated image data in " + images_path);
  if (lab.size() < 8 + n_lab)
    throw IoError("io-error: truncated label data in " + labels_path);

  Dataset ds;
  ds.inputs.resize(n_img, static_cast<Index>(pixels));
  ds.labels.resize(n_lab);
  for (std::uint32_t i = 0; i < n_img; ++i) {
    const std::uint8_t* p = img.data() + 16 + std::size_t(i) * pixels;
    for (std::size_t j = 0; j < pixels; ++j)
      ds.inputs(i, static_cast<Index>(j)) = p[j] / 255.0;
    ds.labels[i] = lab[8 + i];
  }
  ds.num_classes = ds.labels.empty()
                       ? 0
                       : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, int rows, int cols, const std::string& images_path,
              const std::string& labels_path) {
  if (static_cast<Index>(rows) * cols != ds.dim())
    throw DimensionError("image shape " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " does not match dim " +
                         std::to_string(ds.dim()));
  std::vector<std::uint8_t> img;
  img.reserve(16 + std::size_t(ds.size()) * ds.dim());
  append_be32(img, kIdxImages);
  append_be32(img, static_cast<std::uint32_t>(ds.size()));
  append_be32(img, static_cast<std::uint32_t>(rows));
  append_be32(img, static_cast<std::uint32_t>(cols));
  for (Index i = 0; i < ds.size(); ++i)
    for (Index j = 0; j < ds.dim(); ++j) {
      double v = std::clamp(ds.inputs(i, j) * 255.0, 0.0, 255.0);
      img.push_back(static_cast<std::uint8_t>(std::lround(v)));
    }
  write_file_bytes(images_path, img);

  std::vector<std::uint8_t> lab;
  append_be32(lab, kIdxLabels);
  append_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.push_back(static_cast<std::uint8_t>(y));
  write_file_bytes(labels_path, lab);
}

Dataset load_cifar(const std::vector<std::string>& paths, int variant) {
  if (variant != 10 && variant != 100)
    throw FormatError("format-error: unsupported variant " + std::to_string(variant));
  const std::size_t label_bytes = (variant == 10) ? 1 : 2;
  const std::size_t record = label_bytes + 3072;

  std::vector<std::uint8_t> all;
  for (const auto& path : paths) {
    auto bytes = read_maybe_gzip(path);
    if (bytes.size() % record != 0)
      throw FormatError("format-error: " + path + " size " +
                        std::to_string(bytes.size()) + " is not a multiple of " +
                        std::to_string(record));
    all.insert(all.end(), bytes.begin(), bytes.end());
  }

  const std::size_t n = all.size() / record;
  Dataset ds;
  ds.num_classes = variant;
  ds.inputs.resize(static_cast<Index>(n), 3072);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = all.data() + i * record;
    ds.labels[i] = rec[label_bytes - 1];  // fine label for the 100-class layout
    for (std::size_t j = 0; j < 3072; ++j)
      ds.inputs(static_cast<Index>(i), static_cast<Index>(j)) =
          rec[label_bytes + j] / 255.0;
  }
  ds.validate();
  return ds;
}

void save_cifar(const Dataset& ds, int variant, const std::string& path) {
  if (variant != 10 && variant != 100)
    throw FormatError("format-error: unsupported variant " + std::to_string(variant));
  if (ds.dim() != 3072)
    throw DimensionError("cifar records need 3072 pixels, got " +
                         std::to_string(ds.dim()));
  std::vector<std::uint8_t> bytes;
  for (Index i = 0; i < ds.size(); ++i) {
    if (variant == 100) bytes.push_back(0);  // coarse label placeholder
    bytes.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (Index j = 0; j < ds.dim(); ++j) {
      double v = std::clamp(ds.inputs(i, j) * 255.0, 0.0, 255.0);
      bytes.push_back(static_cast<std::uint8_t>(std::lround(v)));
    }
  }
  write_file_bytes(path, bytes);
}

Split split_train_val(const Dataset& dataset, Index val_size, RngStream& rng) {
  if (val_size < 0 || val_size >= dataset.size())
    throw DimensionError("validation size " + std::to_string(val_size) +
                         " out of range for " + std::to_string(dataset.size()) +
                         " samples");
  std::vector<Index> order(static_cast<std::size_t>(dataset.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng.engine());

  auto take = [&](std::size_t begin, std::size_t count) {
    Dataset out;
    out.num_classes = dataset.num_classes;
    out.inputs.resize(static_cast<Index>(count), dataset.dim());
    out.labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      out.inputs.row(static_cast<Index>(i)) = dataset.inputs.row(order[begin + i]);
      out.labels[i] = dataset.labels[static_cast<std::size_t>(order[begin + i])];
    }
    return out;
  };

  Split split;
  split.validation = take(0, static_cast<std::size_t>(val_size));
  split.train = take(static_cast<std::size_t>(val_size),
                     static_cast<std::size_t>(dataset.size() - val_size));
  split.test.num_classes = dataset.num_classes;
  split.test.inputs.resize(0, dataset.dim());
  return split;
}

Dataset synthetic_blobs(int classes, int per_class, int dim, double separation,
                        std::uint64_t seed) {
  if (classes <= 0 || per_class <= 0 || dim <= 0)
    throw DimensionError("blob shape parameters must be positive");
  RngStream rng(seed, 0x626c6f62ULL);  // "blob"
  Dataset ds;
  ds.num_classes = classes;
  ds.inputs.resize(Index(classes) * per_class, dim);
  ds.labels.resize(std::size_t(classes) * per_class);
  // Classes are interleaved so any contiguous batch is class-balanced (batch
  // normalization statistics degenerate on single-class batches).
  Index row = 0;
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < classes; ++c, ++row) {
      for (Index j = 0; j < dim; ++j)
        ds.inputs(row, j) = (j == c % dim ? separation : 0.0) + rng.gaussian();
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return ds;
}

}  // namespace tprop
