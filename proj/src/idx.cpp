#include <zlib.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "spwc/task_stream.hpp"

namespace spwc {
namespace {

std::string at(const std::string& name, std::size_t offset) {
  return name + " at offset " + std::to_string(offset);
}

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::vector<std::uint8_t> gunzip(const std::vector<std::uint8_t>& in, const std::string& name) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw FormatError(name + ": inflateInit failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buffer[1 << 16];
  int status = Z_OK;
  while (status != Z_STREAM_END) {
    zs.next_out = buffer;
    zs.avail_out = sizeof(buffer);
    status = inflate(&zs, Z_NO_FLUSH);
    if (status != Z_OK && status != Z_STREAM_END) {
      const auto offset = zs.total_in;
      inflateEnd(&zs);
      throw FormatError("corrupt gzip stream in " + at(name, offset));
    }
    out.insert(out.end(), buffer, buffer + (sizeof(buffer) - zs.avail_out));
    if (status == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      const auto offset = zs.total_in;
      inflateEnd(&zs);
      throw FormatError("truncated gzip stream in " + at(name, offset));
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes, const std::string& name) {
  if (bytes.size() < 4) throw FormatError("truncated IDX header in " + at(name, bytes.size()));
  if (bytes[0] != 0 || bytes[1] != 0) throw FormatError("bad IDX magic in " + at(name, 0));
  if (bytes[2] != 0x08) {
    throw FormatError("unsupported IDX element type " + std::to_string(bytes[2]) + " in " +
                      at(name, 2));
  }
  const std::size_t ndims = bytes[3];
  if (ndims == 0) throw FormatError("IDX file declares zero dimensions in " + at(name, 3));
  const std::size_t header = 4 + 4 * ndims;
  if (bytes.size() < header) {
    throw FormatError("truncated IDX dimension header in " + at(name, bytes.size()));
  }
  IdxArray array;
  std::size_t count = 1;
  for (std::size_t i = 0; i < ndims; ++i) {
    array.dims.push_back(read_be32(bytes, 4 + 4 * i));
    count *= array.dims.back();
  }
  if (bytes.size() < header + count) {
    throw FormatError("truncated IDX payload in " + at(name, bytes.size()) + ": expected " +
                      std::to_string(header + count) + " bytes");
  }
  if (bytes.size() > header + count) {
    throw FormatError("trailing bytes after IDX payload in " + at(name, header + count));
  }
  array.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return array;
}

std::vector<std::uint8_t> serialize_idx(const IdxArray& array) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * array.dims.size() + array.payload.size());
  write_be32(out, 0x00000800u | static_cast<std::uint32_t>(array.dims.size()));
  for (auto d : array.dims) write_be32(out, d);
  out.insert(out.end(), array.payload.begin(), array.payload.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1F && bytes[1] == 0x8B) {
    return gunzip(bytes, path.string());
  }
  return bytes;
}

IdxArray read_idx(const std::filesystem::path& path) {
  return parse_idx(read_file_bytes(path), path.string());
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = serialize_idx(array);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file_bytes(images_path);
  const auto label_bytes = read_file_bytes(labels_path);
  if (image_bytes.size() >= 4 && read_be32(image_bytes, 0) != kIdxImageMagic) {
    throw FormatError("expected image magic 0x00000803 in " + at(images_path.string(), 0));
  }
  if (label_bytes.size() >= 4 && read_be32(label_bytes, 0) != kIdxLabelMagic) {
    throw FormatError("expected label magic 0x00000801 in " + at(labels_path.string(), 0));
  }
  const IdxArray images = parse_idx(image_bytes, images_path.string());
  const IdxArray labels = parse_idx(label_bytes, labels_path.string());
  if (images.dims.size() != 3) {
    throw FormatError("image file must have 3 dimensions in " + at(images_path.string(), 3));
  }
  if (labels.dims.size() != 1) {
    throw FormatError("label file must have 1 dimension in " + at(labels_path.string(), 3));
  }
  if (images.dims[0] != labels.dims[0]) {
    throw FormatError("image count " + std::to_string(images.dims[0]) + " in " +
                      images_path.string() + " does not match label count " +
                      std::to_string(labels.dims[0]) + " in " + at(labels_path.string(), 4));
  }
  Dataset data;
  const std::size_t n = images.dims[0];
  data.image_rows = images.dims[1];
  data.image_cols = images.dims[2];
  const std::size_t d = data.image_rows * data.image_cols;
  data.inputs.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n * d; ++i) {
    data.inputs.data()[i] = static_cast<double>(images.payload[i]) / 255.0;
  }
  data.labels.assign(labels.payload.begin(), labels.payload.end());
  std::size_t max_label = 0;
  for (auto y : data.labels) max_label = std::max<std::size_t>(max_label, y);
  data.num_classes = n == 0 ? 0 : max_label + 1;
  return data;
}

void save_idx(const Dataset& data, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path) {
  if (data.image_rows * data.image_cols != data.dim()) {
    throw UsageError("save_idx: dataset has no image geometry matching its width");
  }
  IdxArray images;
  images.dims = {static_cast<std::uint32_t>(data.size()), static_cast<std::uint32_t>(data.image_rows),
                 static_cast<std::uint32_t>(data.image_cols)};
  images.payload.resize(data.size() * data.dim());
  for (std::size_t i = 0; i < images.payload.size(); ++i) {
    images.payload[i] = static_cast<std::uint8_t>(std::lround(data.inputs.data()[i] * 255.0));
  }
  IdxArray labels;
  labels.dims = {static_cast<std::uint32_t>(data.size())};
  labels.payload.assign(data.labels.begin(), data.labels.end());
  write_idx(images_path, images);
  write_idx(labels_path, labels);
}

}  // namespace spwc
