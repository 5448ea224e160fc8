#pragma once

#include "scpvis/error.hpp"
#include "scpvis/geometry.hpp"
#include "scpvis/kdtree.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

namespace scpvis {

/// One point becomes the eight corners of a cube of half-width `offset`.
inline Points inflate_cubic(const Points& pts, double offset) {
  if (offset <= 0.0) return pts;
  Points out;
  out.reserve(pts.size() * 8);
  for (const auto& p : pts) {
    for (int c = 0; c < 8; ++c) {
      out.emplace_back(p.x() + ((c & 1) ? offset : -offset),
                       p.y() + ((c & 2) ? offset : -offset),
                       p.z() + ((c & 4) ? offset : -offset));
    }
  }
  return out;
}

/**
 * Immutable obstacle map: the (already inflated) point set plus its k-d index.
 *
 * Copies share the underlying storage, so passing maps by value is cheap and
 * concurrent read-only queries are safe.
 */
class PointCloudMap {
 public:
  PointCloudMap() : PointCloudMap(Points{}, 0.0) {}

  PointCloudMap(Points raw, double inflation_offset) {
    if (inflation_offset < 0.0)
      throw Error(ErrorKind::input, "inflation offset must be non-negative");
    auto impl = std::make_shared<Impl>();
    impl->source_count = raw.size();
    impl->points = inflate_cubic(raw, inflation_offset);
    impl->offset = inflation_offset;
    impl->bounds = bounding_box(impl->points);
    impl->tree = KdTree(&impl->points);
    impl_ = std::move(impl);
  }

  const Points& points() const { return impl_->points; }
  std::size_t size() const { return impl_->points.size(); }
  bool empty() const { return impl_->points.empty(); }
  std::size_t source_count() const { return impl_->source_count; }
  double inflation_offset() const { return impl_->offset; }
  const Aabb& bounds() const { return impl_->bounds; }
  const KdTree& index() const { return impl_->tree; }

 private:
  struct Impl {
    Points points;
    KdTree tree;
    double offset = 0.0;
    std::size_t source_count = 0;
    Aabb bounds;
  };
  std::shared_ptr<const Impl> impl_;
};

/// Points with distance(center, p) <= radius (boundary inclusive).
inline Points range_query(const PointCloudMap& map, const Vec3& center,
                          double radius) {
  Points out;
  map.index().for_each_in_radius(center, radius, [&](std::uint32_t i) {
    out.push_back(map.points()[i]);
  });
  return out;
}

/// True iff no map point lies strictly within `clearance` of segment [a,b].
inline bool segment_clear(const PointCloudMap& map, const Vec3& a,
                          const Vec3& b, double clearance) {
  return !map.index().any_near_segment(a, b, clearance);
}

inline double nearest_distance(const PointCloudMap& map, const Vec3& p) {
  return map.index().nearest(p).second;
}

// ---------------------------------------------------------------------------
// File input / output

namespace detail {

inline Points read_xyz(std::istream& in) {
  Points pts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x >> y >> z))
      throw Error(ErrorKind::parse,
                  "malformed point at line " + std::to_string(line_no));
    std::string rest;
    if (ls >> rest)
      throw Error(ErrorKind::parse,
                  "trailing data at line " + std::to_string(line_no));
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
      throw Error(ErrorKind::parse,
                  "non-finite coordinate at line " + std::to_string(line_no));
    pts.emplace_back(x, y, z);
  }
  return pts;
}

struct PlyProperty {
  std::string type;
  std::string name;
};

inline std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" ||
      t == "uint32" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

inline double ply_read_binary(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "double" || t == "float64") {
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  if (t == "int" || t == "int32") {
    std::int32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "uint" || t == "uint32") {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "short" || t == "int16") {
    std::int16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "ushort" || t == "uint16") {
    std::uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "char" || t == "int8") return static_cast<std::int8_t>(*p);
  return static_cast<std::uint8_t>(*p);
}

/// Vertex-only PLY (ascii or binary_little_endian); other elements must
/// follow the vertex block and are ignored.
inline Points read_ply(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line.rfind("ply", 0) != 0)
    throw Error(ErrorKind::parse, "missing ply magic at line 1");
  std::string format;
  std::size_t vertex_count = 0;
  std::vector<PlyProperty> props;
  bool in_vertex = false;
  bool seen_vertex = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      ls >> format;
    } else if (key == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        vertex_count = count;
        seen_vertex = true;
      }
    } else if (key == "property") {
      if (in_vertex) {
        PlyProperty prop;
        ls >> prop.type;
        if (prop.type == "list")
          throw Error(ErrorKind::parse, "list property in vertex element at line " +
                                            std::to_string(line_no));
        ls >> prop.name;
        props.push_back(prop);
      }
    } else if (key == "end_header") {
      break;
    } else if (key != "comment" && key != "obj_info" && !key.empty()) {
      throw Error(ErrorKind::parse,
                  "unexpected header entry at line " + std::to_string(line_no));
    }
  }
  if (!seen_vertex)
    throw Error(ErrorKind::parse, "ply has no vertex element");
  int ix = -1, iy = -1, iz = -1;
  for (int i = 0; i < static_cast<int>(props.size()); ++i) {
    if (props[i].name == "x") ix = i;
    if (props[i].name == "y") iy = i;
    if (props[i].name == "z") iz = i;
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw Error(ErrorKind::parse, "ply vertex element lacks x/y/z");

  Points pts;
  pts.reserve(vertex_count);
  if (format == "ascii") {
    for (std::size_t v = 0; v < vertex_count; ++v) {
      if (!std::getline(in, line))
        throw Error(ErrorKind::parse,
                    "truncated vertex data at line " + std::to_string(line_no + 1));
      ++line_no;
      std::istringstream ls(line);
      std::vector<double> vals(props.size());
      for (auto& val : vals) {
        if (!(ls >> val))
          throw Error(ErrorKind::parse,
                      "malformed vertex at line " + std::to_string(line_no));
      }
      pts.emplace_back(vals[ix], vals[iy], vals[iz]);
    }
  } else if (format == "binary_little_endian") {
    std::vector<std::size_t> offsets;
    std::size_t stride = 0;
    for (const auto& p : props) {
      const std::size_t s = ply_type_size(p.type);
      if (s == 0) throw Error(ErrorKind::parse, "unknown ply type " + p.type);
      offsets.push_back(stride);
      stride += s;
    }
    std::vector<char> rec(stride);
    for (std::size_t v = 0; v < vertex_count; ++v) {
      if (!in.read(rec.data(), static_cast<std::streamsize>(stride)))
        throw Error(ErrorKind::parse,
                    "truncated binary vertex " + std::to_string(v));
      pts.emplace_back(ply_read_binary(rec.data() + offsets[ix], props[ix].type),
                       ply_read_binary(rec.data() + offsets[iy], props[iy].type),
                       ply_read_binary(rec.data() + offsets[iz], props[iz].type));
    }
  } else {
    throw Error(ErrorKind::parse, "unsupported ply format '" + format + "'");
  }
  return pts;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace detail

/// Raw points from an `.xyz` or `.ply` file, without inflation.
inline Points read_points(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path);
  if (detail::ends_with(path, ".ply")) return detail::read_ply(in);
  return detail::read_xyz(in);
}

inline void write_xyz(const std::string& path, const Points& pts) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw Error(ErrorKind::io, "cannot write " + path);
  for (const auto& p : pts) std::fprintf(f, "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
  std::fclose(f);
}

inline PointCloudMap load_map(const std::string& path, double inflation_offset) {
  if (inflation_offset < 0.0)
    throw Error(ErrorKind::input, "inflation offset must be non-negative");
  Points raw = read_points(path);
  if (raw.empty()) throw Error(ErrorKind::empty_map, "no points in " + path);
  return PointCloudMap(std::move(raw), inflation_offset);
}

// ---------------------------------------------------------------------------
// Voxel occupancy

class VoxelGrid {
 public:
  static constexpr std::size_t kDefaultCellCap = 64ull * 1024 * 1024;

  VoxelGrid() = default;

  VoxelGrid(const Vec3& origin, double resolution, const Eigen::Vector3i& dims)
      : origin_(origin), resolution_(resolution), dims_(dims),
        occupancy_(static_cast<std::size_t>(dims.prod()), 0) {}

  const Vec3& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  std::size_t cell_count() const { return occupancy_.size(); }

  bool in_bounds(const Eigen::Vector3i& v) const {
    return (v.array() >= 0).all() && (v.array() < dims_.array()).all();
  }

  std::size_t linear(const Eigen::Vector3i& v) const {
    return (static_cast<std::size_t>(v.z()) * dims_.y() + v.y()) * dims_.x() + v.x();
  }

  Eigen::Vector3i unlinear(std::size_t i) const {
    const int x = static_cast<int>(i % dims_.x());
    const std::size_t r = i / dims_.x();
    return {x, static_cast<int>(r % dims_.y()), static_cast<int>(r / dims_.y())};
  }

  Eigen::Vector3i world_to_voxel(const Vec3& p) const {
    const Vec3 q = (p - origin_) / resolution_;
    return {static_cast<int>(std::floor(q.x())), static_cast<int>(std::floor(q.y())),
            static_cast<int>(std::floor(q.z()))};
  }

  Vec3 voxel_center(const Eigen::Vector3i& v) const {
    return origin_ + (v.cast<double>().array() + 0.5).matrix() * resolution_;
  }

  /// Out-of-bounds voxels count as occupied.
  bool occupied(const Eigen::Vector3i& v) const {
    return !in_bounds(v) || occupancy_[linear(v)] != 0;
  }

  void set_occupied(const Eigen::Vector3i& v, bool value = true) {
    if (in_bounds(v)) occupancy_[linear(v)] = value ? 1 : 0;
  }

  std::size_t occupied_count() const {
    return static_cast<std::size_t>(
        std::count(occupancy_.begin(), occupancy_.end(), std::uint8_t{1}));
  }

  const std::vector<std::uint8_t>& raw() const { return occupancy_; }

 private:
  Vec3 origin_ = Vec3::Zero();
  double resolution_ = 1.0;
  Eigen::Vector3i dims_ = Eigen::Vector3i::Zero();
  std::vector<std::uint8_t> occupancy_;
};

/// Grid covering `bounds` (default: map bounds); a voxel is occupied iff it
/// contains at least one map point.
inline VoxelGrid build_voxel_grid(const PointCloudMap& map, double resolution,
                                  std::optional<Aabb> bounds = std::nullopt,
                                  std::size_t cell_cap = VoxelGrid::kDefaultCellCap) {
  if (!(resolution > 0.0))
    throw Error(ErrorKind::input, "voxel resolution must be positive");
  Aabb box = bounds ? *bounds : map.bounds();
  if (box.empty()) box = Aabb{Vec3::Zero(), Vec3::Zero()};
  Eigen::Vector3i dims;
  double cells = 1.0;
  for (int k = 0; k < 3; ++k) {
    // floor + 1 so a point exactly on the max face still gets a cell
    const double span = std::floor((box.max[k] - box.min[k]) / resolution) + 1.0;
    cells *= span;
    if (cells > static_cast<double>(cell_cap))
      throw Error(ErrorKind::resource, "voxel grid exceeds cell cap");
    dims[k] = static_cast<int>(span);
  }
  VoxelGrid grid(box.min, resolution, dims);
  for (const auto& p : map.points()) grid.set_occupied(grid.world_to_voxel(p));
  return grid;
}

/// Grow occupancy by `radius` voxels in the 26-neighbourhood sense.
inline VoxelGrid dilate(const VoxelGrid& grid, int radius) {
  if (radius <= 0) return grid;
  VoxelGrid out = grid;
  const auto& d = grid.dims();
  for (std::size_t i = 0; i < grid.cell_count(); ++i) {
    if (!grid.raw()[i]) continue;
    const Eigen::Vector3i v = grid.unlinear(i);
    for (int dz = -radius; dz <= radius; ++dz)
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const Eigen::Vector3i n = v + Eigen::Vector3i(dx, dy, dz);
          if ((n.array() >= 0).all() && (n.array() < d.array()).all())
            out.set_occupied(n);
        }
  }
  return out;
}

}  // namespace scpvis
