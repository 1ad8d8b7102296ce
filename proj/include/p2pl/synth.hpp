#ifndef P2PL_SYNTH_HPP
#define P2PL_SYNTH_HPP

#include <p2pl/error.hpp>
#include <p2pl/kdtree.hpp>
#include <p2pl/point_cloud.hpp>
#include <p2pl/rng.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace p2pl {

enum class ShapeKind { cube, sphere, torus, blob };

inline ShapeKind parse_shape_kind(std::string_view s) {
  if (s == "cube") return ShapeKind::cube;
  if (s == "sphere") return ShapeKind::sphere;
  if (s == "torus") return ShapeKind::torus;
  if (s == "blob") return ShapeKind::blob;
  throw std::invalid_argument("unknown shape '" + std::string(s) + "'");
}

inline const char* to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::cube: return "cube";
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::torus: return "torus";
    case ShapeKind::blob: return "blob";
  }
  return "?";
}

/// Torus radii used by synth_shape.
inline constexpr double kTorusMajor = 1.0;
inline constexpr double kTorusMinor = 0.35;

/// Star-shaped surface r(d) = 1 + sum_k a_k exp(kappa (d.c_k - 1)) over unit
/// directions d. Positive amplitudes keep r >= 1.
struct BlobField {
  static constexpr int kBumps = 6;
  static constexpr double kKappa = 3.0;
  std::array<Vec3, kBumps> centers;
  std::array<double, kBumps> amplitudes;

  explicit BlobField(Rng& rng) {
    for (int k = 0; k < kBumps; ++k) {
      centers[k] = rng.unit_vector();
      amplitudes[k] = rng.uniform(0.05, 0.35);
    }
  }

  double radius(const Vec3& d) const {
    double r = 1.0;
    for (int k = 0; k < kBumps; ++k) r += amplitudes[k] * std::exp(kKappa * (d.dot(centers[k]) - 1.0));
    return r;
  }

  /// Gradient of radius() w.r.t. d (ambient, before tangent projection).
  Vec3 radius_gradient(const Vec3& d) const {
    Vec3 g = Vec3::Zero();
    for (int k = 0; k < kBumps; ++k)
      g += amplitudes[k] * kKappa * std::exp(kKappa * (d.dot(centers[k]) - 1.0)) * centers[k];
    return g;
  }

  /// Outward unit normal at p = r(d) d: gradient of |p| - r(p/|p|).
  Vec3 normal(const Vec3& p) const {
    const double len = p.norm();
    const Vec3 s = p / len;
    const Vec3 gr = radius_gradient(s);
    const Vec3 grad = s - (gr - s * s.dot(gr)) / len;
    return grad.normalized();
  }
};

/// n surface samples with analytic unit normals. Cube: surface of [-1,1]^3;
/// sphere: unit sphere; torus: radii (1, 0.35) around z; blob: BlobField
/// drawn from the seed.
inline PointCloud synth_shape(ShapeKind kind, std::size_t n, std::uint64_t seed) {
  if (n < 8) throw std::invalid_argument("synth_shape needs n >= 8");
  Rng rng(seed);
  PointCloud cloud;
  cloud.positions.reserve(n);
  cloud.normals.reserve(n);
  switch (kind) {
    case ShapeKind::cube:
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t face = rng.index(6);
        const int axis = static_cast<int>(face / 2);
        const double sign = (face % 2 == 0) ? 1.0 : -1.0;
        Vec3 p(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        p[axis] = sign;
        Vec3 nrm = Vec3::Zero();
        nrm[axis] = sign;
        cloud.positions.push_back(p);
        cloud.normals.push_back(nrm);
      }
      break;
    case ShapeKind::sphere:
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 p = rng.unit_vector();
        cloud.positions.push_back(p);
        cloud.normals.push_back(p / p.norm());
      }
      break;
    case ShapeKind::torus:
      for (std::size_t i = 0; i < n; ++i) {
        // Rejection on the tube angle gives area-uniform samples.
        double u = 0.0, v = 0.0;
        for (;;) {
          u = rng.uniform(0.0, 2.0 * kPi);
          v = rng.uniform(0.0, 2.0 * kPi);
          const double w = (kTorusMajor + kTorusMinor * std::cos(v)) / (kTorusMajor + kTorusMinor);
          if (rng.uniform() <= w) break;
        }
        const Vec3 nrm(std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v));
        const Vec3 p((kTorusMajor + kTorusMinor * std::cos(v)) * std::cos(u),
                     (kTorusMajor + kTorusMinor * std::cos(v)) * std::sin(u), kTorusMinor * std::sin(v));
        cloud.positions.push_back(p);
        cloud.normals.push_back(nrm);
      }
      break;
    case ShapeKind::blob: {
      const BlobField field(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const Vec3 d = rng.unit_vector();
        const Vec3 p = field.radius(d) * d;
        cloud.positions.push_back(p);
        cloud.normals.push_back(field.normal(p));
      }
      break;
    }
  }
  return cloud;
}

/// Data-augmentation parameters for compose / partial / unduplicated pairs.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_sample = 1024;
  std::size_t n_partial = 768;
  double rot_max_deg = 45.0;
  double trans_max = 0.5;
  std::size_t compose_count = 3;
  /// Draw source and target with the same sample indices (test hook; the
  /// protocol samples them independently).
  bool shared_sampling = false;

  void validate() const {
    if (n_partial > n_sample) throw std::invalid_argument("n_partial must not exceed n_sample");
    if (n_partial == 0) throw std::invalid_argument("n_partial must be positive");
    if (rot_max_deg < 0.0 || rot_max_deg > 180.0) throw std::invalid_argument("rot_max_deg must lie in [0, 180]");
    if (trans_max < 0.0) throw std::invalid_argument("trans_max must be nonnegative");
    if (compose_count == 0) throw std::invalid_argument("compose_count must be positive");
  }
};

/// Rz(yaw) Ry(pitch) Rx(roll) with each angle uniform in [0, rot_max_deg] and
/// translation uniform in [-trans_max, trans_max]^3.
inline RigidTransform random_transform(Rng& rng, double rot_max_deg, double trans_max) {
  const double roll = deg2rad(rng.uniform(0.0, rot_max_deg));
  const double pitch = deg2rad(rng.uniform(0.0, rot_max_deg));
  const double yaw = deg2rad(rng.uniform(0.0, rot_max_deg));
  RigidTransform t;
  t.rotation = euler_zyx_to_matrix(yaw, pitch, roll);
  t.translation = Vec3(rng.uniform(-trans_max, trans_max), rng.uniform(-trans_max, trans_max),
                       rng.uniform(-trans_max, trans_max));
  return t;
}

/// Simulated partial scan: a sensor sits at twice the bounding radius from
/// the centroid in direction `dir`; the `keep` points nearest to it survive,
/// in their original order (distance ties go to the lower index).
inline std::vector<std::size_t> partial_scan_indices(const PointCloud& cloud, const Vec3& dir, std::size_t keep) {
  const Vec3 c = centroid(cloud.positions);
  double radius = 0.0;
  for (const auto& p : cloud.positions) radius = std::max(radius, (p - c).norm());
  const Vec3 sensor = c + 2.0 * std::max(radius, 1e-12) * dir.normalized();
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), 0);
  keep = std::min(keep, idx.size());
  std::vector<double> d(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) d[i] = (cloud.positions[i] - sensor).squaredNorm();
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(keep), idx.end(),
                   [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && a < b); });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Builds one registration pair from the given shapes:
///  1. composes compose_count shapes (cycling through `shapes`), each under an
///     independent random rigid transform, into X_all;
///  2. draws gt and forms Y_all = gt(X_all);
///  3. samples n_sample points for source and target from disjoint index sets
///     (unduplicated);
///  4. partial-scans each to n_partial points.
inline RegistrationPair make_cpu_pair(std::span<const PointCloud> shapes, const SynthConfig& cfg) {
  cfg.validate();
  if (shapes.empty()) throw std::invalid_argument("make_cpu_pair needs at least one shape");
  for (const auto& s : shapes)
    if (s.size() < cfg.n_sample)
      throw InsufficientPoints("shape has " + std::to_string(s.size()) + " points, need " +
                               std::to_string(cfg.n_sample));

  Rng root(cfg.seed);
  Rng compose_rng = root.split(1);
  Rng pair_rng = root.split(2);
  Rng sample_rng = root.split(3);
  Rng partial_rng = root.split(4);

  PointCloud all;
  for (std::size_t k = 0; k < cfg.compose_count; ++k) {
    const PointCloud& shape = shapes[k % shapes.size()];
    const RigidTransform place = random_transform(compose_rng, cfg.rot_max_deg, cfg.trans_max);
    const PointCloud moved = p2pl::apply(place, shape);
    all.positions.insert(all.positions.end(), moved.positions.begin(), moved.positions.end());
    all.normals.insert(all.normals.end(), moved.normals.begin(), moved.normals.end());
  }
  if (!all.has_normals()) all.normals.clear();

  const RigidTransform gt = random_transform(pair_rng, cfg.rot_max_deg, cfg.trans_max);
  const PointCloud all_target = p2pl::apply(gt, all);

  std::vector<std::size_t> perm(all.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), sample_rng.engine());
  std::vector<std::size_t> src_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(cfg.n_sample));
  std::vector<std::size_t> tgt_idx;
  if (cfg.shared_sampling) {
    tgt_idx = src_idx;
  } else {
    if (all.size() < 2 * cfg.n_sample)
      throw InsufficientPoints("composed cloud has " + std::to_string(all.size()) +
                               " points; two disjoint samples need " + std::to_string(2 * cfg.n_sample));
    tgt_idx.assign(perm.begin() + static_cast<std::ptrdiff_t>(cfg.n_sample),
                   perm.begin() + static_cast<std::ptrdiff_t>(2 * cfg.n_sample));
  }
  std::sort(src_idx.begin(), src_idx.end());
  std::sort(tgt_idx.begin(), tgt_idx.end());

  RegistrationPair pair;
  pair.clean_source = select(all, src_idx);
  pair.clean_target = select(all_target, tgt_idx);
  pair.gt = gt;

  const Vec3 src_dir = partial_rng.unit_vector();
  const Vec3 tgt_dir = partial_rng.unit_vector();
  pair.source = select(*pair.clean_source, partial_scan_indices(*pair.clean_source, src_dir, cfg.n_partial));
  pair.target = select(*pair.clean_target, partial_scan_indices(*pair.clean_target, tgt_dir, cfg.n_partial));
  return pair;
}

struct NormalEstimate {
  PointCloud cloud;
  /// Points whose neighborhood covariance has rank < 2.
  std::vector<std::size_t> degenerate;
};

enum class NormalSign {
  random,      ///< seeded coin flip per point (deliberately ambiguous)
  consistent,  ///< oriented away from the cloud centroid
};

/// PCA normals: smallest-eigenvalue eigenvector of the covariance of the k
/// nearest neighbors (the point itself included).
inline NormalEstimate estimate_normals(const PointCloud& cloud, std::size_t k, std::uint64_t seed,
                                       NormalSign sign = NormalSign::random) {
  if (k < 3) throw std::invalid_argument("estimate_normals needs k >= 3");
  if (k >= cloud.size()) throw std::invalid_argument("estimate_normals needs k < N");
  const KdTree tree(cloud.positions);
  const Rng rng(seed);
  const Vec3 c = centroid(cloud.positions);

  NormalEstimate out;
  out.cloud.positions = cloud.positions;
  out.cloud.normals.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto nbrs = tree.knn(cloud.positions[i], k);
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += cloud.positions[nb.index];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = cloud.positions[nb.index] - mean;
      cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    const Vec3 evals = es.eigenvalues();  // ascending
    Vec3 n = es.eigenvectors().col(0).normalized();
    if (evals(1) <= 1e-12 * std::max(evals(2), 1e-300)) out.degenerate.push_back(i);
    if (sign == NormalSign::random) {
      Rng point_rng = rng.split(i);
      if (point_rng.coin()) n = -n;
    } else if (n.dot(cloud.positions[i] - c) < 0.0) {
      n = -n;
    }
    out.cloud.normals[i] = n;
  }
  return out;
}

}  // namespace p2pl

#endif  // P2PL_SYNTH_HPP
