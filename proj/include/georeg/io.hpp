#pragma once

#include "georeg/core.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace georeg {

namespace detail {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline PlyType parse_ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::Int8;
  if (name == "uchar" || name == "uint8") return PlyType::UInt8;
  if (name == "short" || name == "int16") return PlyType::Int16;
  if (name == "ushort" || name == "uint16") return PlyType::UInt16;
  if (name == "int" || name == "int32") return PlyType::Int32;
  if (name == "uint" || name == "uint32") return PlyType::UInt32;
  if (name == "float" || name == "float32") return PlyType::Float32;
  if (name == "double" || name == "float64") return PlyType::Float64;
  throw Error(ErrorKind::Io, "unknown PLY property type '" + name + "'");
}

inline std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw Error(ErrorKind::Io, "unexpected end of binary data");
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline double read_binary_scalar(std::istream& in, PlyType t) {
  switch (t) {
    case PlyType::Int8: return read_le<std::int8_t>(in);
    case PlyType::UInt8: return read_le<std::uint8_t>(in);
    case PlyType::Int16: return read_le<std::int16_t>(in);
    case PlyType::UInt16: return read_le<std::uint16_t>(in);
    case PlyType::Int32: return read_le<std::int32_t>(in);
    case PlyType::UInt32: return read_le<std::uint32_t>(in);
    case PlyType::Float32: return read_le<float>(in);
    case PlyType::Float64: return read_le<double>(in);
  }
  return 0.0;
}

inline double read_ascii_scalar(std::istream& in) {
  std::string token;
  if (!(in >> token)) throw Error(ErrorKind::Io, "unexpected end of ASCII data");
  try {
    return std::stod(token);
  } catch (const std::exception&) {
    throw Error(ErrorKind::Io, "malformed number '" + token + "'");
  }
}

inline bool is_float_type(PlyType t) { return t == PlyType::Float32 || t == PlyType::Float64; }

}  // namespace detail

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// Reads the `vertex` element of a PLY file. Requires float x, y, z; every
/// other property and element is parsed and discarded.
inline PointCloud read_ply(const std::filesystem::path& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0) {
    throw Error(ErrorKind::Io, path.string() + " is not a PLY file");
  }
  PlyFormat format = PlyFormat::Ascii;
  bool have_format = false;
  std::vector<PlyElement> elements;
  while (true) {
    if (!std::getline(in, line)) throw Error(ErrorKind::Io, "PLY header is not terminated");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string keyword;
    ls >> keyword;
    if (keyword == "end_header") break;
    if (keyword == "comment" || keyword == "obj_info" || keyword.empty()) continue;
    if (keyword == "format") {
      std::string name;
      ls >> name;
      if (name == "ascii") {
        format = PlyFormat::Ascii;
      } else if (name == "binary_little_endian") {
        format = PlyFormat::BinaryLittleEndian;
      } else {
        throw Error(ErrorKind::Io, "unsupported PLY format '" + name + "'");
      }
      have_format = true;
    } else if (keyword == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      if (!ls) throw Error(ErrorKind::Io, "malformed element line: " + line);
      elements.push_back(std::move(e));
    } else if (keyword == "property") {
      if (elements.empty()) throw Error(ErrorKind::Io, "property before any element");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = parse_ply_type(count_type);
        p.type = parse_ply_type(item_type);
      } else {
        p.type = parse_ply_type(type);
        ls >> p.name;
      }
      if (!ls) throw Error(ErrorKind::Io, "malformed property line: " + line);
      elements.back().properties.push_back(p);
    } else {
      throw Error(ErrorKind::Io, "unexpected PLY header line: " + line);
    }
  }
  if (!have_format) throw Error(ErrorKind::Io, "PLY header has no format line");

  PointCloud cloud;
  bool have_vertices = false;
  for (const auto& e : elements) {
    int xyz[3] = {-1, -1, -1};
    const bool is_vertex = e.name == "vertex";
    if (is_vertex) {
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        const auto& p = e.properties[k];
        const int axis = p.name == "x" ? 0 : p.name == "y" ? 1 : p.name == "z" ? 2 : -1;
        if (axis < 0) continue;
        if (p.is_list || !is_float_type(p.type)) {
          throw Error(ErrorKind::Io, "vertex property '" + p.name + "' must be a float scalar");
        }
        xyz[axis] = static_cast<int>(k);
      }
      if (xyz[0] < 0 || xyz[1] < 0 || xyz[2] < 0) {
        throw Error(ErrorKind::Io, "vertex element lacks x, y, z properties");
      }
      have_vertices = true;
      cloud.points.reserve(e.count);
    }
    std::vector<double> values(e.properties.size());
    for (std::size_t row = 0; row < e.count; ++row) {
      for (std::size_t k = 0; k < e.properties.size(); ++k) {
        const auto& p = e.properties[k];
        if (format == PlyFormat::Ascii) {
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(read_ascii_scalar(in));
            for (std::size_t m = 0; m < n; ++m) read_ascii_scalar(in);
          } else {
            values[k] = read_ascii_scalar(in);
          }
        } else {
          if (p.is_list) {
            const auto n = static_cast<std::size_t>(read_binary_scalar(in, p.count_type));
            in.ignore(static_cast<std::streamsize>(n * ply_type_size(p.type)));
            if (!in) throw Error(ErrorKind::Io, "unexpected end of binary data");
          } else {
            values[k] = read_binary_scalar(in, p.type);
          }
        }
      }
      if (is_vertex) cloud.points.emplace_back(values[xyz[0]], values[xyz[1]], values[xyz[2]]);
    }
  }
  if (!have_vertices) throw Error(ErrorKind::Io, "PLY file has no vertex element");
  validate(cloud);
  return cloud;
}

/// Writes x, y, z as 32-bit floats. Features are not stored in PLY; use the sidecar.
inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
                      PlyFormat format = PlyFormat::BinaryLittleEndian) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "ply\n"
      << (format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n")
      << "element vertex " << cloud.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "end_header\n";
  if (format == PlyFormat::Ascii) {
    out.precision(9);
    for (const auto& p : cloud.points) {
      out << static_cast<float>(p.x()) << ' ' << static_cast<float>(p.y()) << ' ' << static_cast<float>(p.z()) << '\n';
    }
  } else {
    for (const auto& p : cloud.points) {
      detail::write_le(out, static_cast<float>(p.x()));
      detail::write_le(out, static_cast<float>(p.y()));
      detail::write_le(out, static_cast<float>(p.z()));
    }
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

// Feature sidecar: "GRFT", u32 rows, u32 dim, then row-major f32.

inline void write_feature_sidecar(const std::filesystem::path& path, const FeatureMatrix& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write("GRFT", 4);
  detail::write_le(out, static_cast<std::uint32_t>(features.rows()));
  detail::write_le(out, static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    for (Eigen::Index c = 0; c < features.cols(); ++c) detail::write_le(out, static_cast<float>(features(r, c)));
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline FeatureMatrix read_feature_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GRFT", 4) != 0) throw Error(ErrorKind::Io, path.string() + ": bad sidecar magic");
  const auto rows = detail::read_le<std::uint32_t>(in);
  const auto cols = detail::read_le<std::uint32_t>(in);
  if (rows > 0 && cols == 0) throw Error(ErrorKind::Io, "sidecar feature dim must be >= 1");
  FeatureMatrix f(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) f(r, c) = detail::read_le<float>(in);
  }
  return f;
}

}  // namespace georeg
