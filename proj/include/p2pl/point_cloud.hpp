#ifndef P2PL_POINT_CLOUD_HPP
#define P2PL_POINT_CLOUD_HPP

#include <p2pl/geom.hpp>

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace p2pl {

/// Positions with optional per-point unit normals. An empty `normals` vector
/// means the cloud carries no normals (e.g. loaded from a file without them).
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  bool has_normals() const { return !normals.empty() && normals.size() == positions.size(); }

  /// Throws std::invalid_argument when an invariant is broken.
  void validate(double unit_tol = 1e-9) const {
    if (positions.empty()) throw std::invalid_argument("point cloud is empty");
    if (!normals.empty() && normals.size() != positions.size())
      throw std::invalid_argument("normal count does not match position count");
    for (const auto& p : positions)
      if (!p.allFinite()) throw std::invalid_argument("non-finite position");
    for (const auto& n : normals)
      if (std::abs(n.norm() - 1.0) > unit_tol) throw std::invalid_argument("normal is not unit length");
  }
};

/// Positions mapped by R p + t, normals by R only.
inline PointCloud apply(const RigidTransform& t, const PointCloud& cloud) {
  PointCloud out;
  out.positions.reserve(cloud.size());
  for (const auto& p : cloud.positions) out.positions.push_back(t.apply(p));
  out.normals.reserve(cloud.normals.size());
  for (const auto& n : cloud.normals) out.normals.push_back(t.rotation * n);
  return out;
}

inline std::vector<Vec3> apply(const RigidTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

/// Subset in the order given by `indices`.
inline PointCloud select(const PointCloud& cloud, std::span<const std::size_t> indices) {
  PointCloud out;
  out.positions.reserve(indices.size());
  for (auto i : indices) out.positions.push_back(cloud.positions.at(i));
  if (cloud.has_normals()) {
    out.normals.reserve(indices.size());
    for (auto i : indices) out.normals.push_back(cloud.normals[i]);
  }
  return out;
}

inline Vec3 centroid(std::span<const Vec3> points) {
  Vec3 c = Vec3::Zero();
  for (const auto& p : points) c += p;
  return points.empty() ? c : Vec3(c / static_cast<double>(points.size()));
}

/// Ground-truth-annotated registration problem. gt maps the source frame to
/// the target frame; the clean clouds are the samples before partial scanning.
struct RegistrationPair {
  PointCloud source;
  PointCloud target;
  std::optional<RigidTransform> gt;
  std::optional<PointCloud> clean_source;
  std::optional<PointCloud> clean_target;
};

}  // namespace p2pl

#endif  // P2PL_POINT_CLOUD_HPP
