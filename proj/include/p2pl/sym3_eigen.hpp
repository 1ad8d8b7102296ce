#ifndef P2PL_SYM3_EIGEN_HPP
#define P2PL_SYM3_EIGEN_HPP

#include <p2pl/geom.hpp>

#include <algorithm>
#include <cmath>

namespace p2pl {

/// Eigen-decomposition of a symmetric 3x3 matrix, eigenvalues descending.
struct Sym3Eigen {
  Vec3 values;   // values(0) >= values(1) >= values(2)
  Mat3 vectors;  // column k pairs with values(k)
};

namespace detail {

/// Flips v so its largest-magnitude component (lowest index on ties) is positive.
inline Vec3 canonical_sign(const Vec3& v) {
  int k = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(v(i)) > std::abs(v(k))) k = i;
  return v(k) < 0.0 ? Vec3(-v) : v;
}

/// Any unit vector orthogonal to v (v nonzero).
inline Vec3 any_orthogonal(const Vec3& v) {
  const Vec3 axis = std::abs(v.x()) <= std::abs(v.y()) && std::abs(v.x()) <= std::abs(v.z())
                        ? Vec3::UnitX()
                        : (std::abs(v.y()) <= std::abs(v.z()) ? Vec3::UnitY() : Vec3::UnitZ());
  return v.cross(axis).normalized();
}

/// Null vector of (A - lambda I) from the largest cross product of its rows.
inline Vec3 null_vector(const Mat3& a, double lambda) {
  const Mat3 m = a - lambda * Mat3::Identity();
  const Vec3 r0 = m.row(0), r1 = m.row(1), r2 = m.row(2);
  const Vec3 c[3] = {r0.cross(r1), r0.cross(r2), r1.cross(r2)};
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (c[i].squaredNorm() > c[best].squaredNorm()) best = i;
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  if (c[best].squaredNorm() > 1e-28 * scale * scale * scale * scale) return c[best].normalized();
  // rank(m) <= 1: every vector orthogonal to the dominant row works.
  int row = 0;
  for (int i = 1; i < 3; ++i)
    if (m.row(i).squaredNorm() > m.row(row).squaredNorm()) row = i;
  const Vec3 r = m.row(row);
  if (r.squaredNorm() <= 1e-28 * scale * scale) return Vec3::UnitX();
  return any_orthogonal(r);
}

}  // namespace detail

/// Closed-form (trigonometric) roots of the characteristic polynomial, each
/// refined with one Newton step, then eigenvectors from row cross products.
/// Eigenvectors are sign-canonicalized so the output is deterministic.
inline Sym3Eigen sym3_eigen(const Mat3& a) {
  const Mat3 s = 0.5 * (a + a.transpose());
  const double off = s(0, 1) * s(0, 1) + s(0, 2) * s(0, 2) + s(1, 2) * s(1, 2);
  const double q = s.trace() / 3.0;
  Vec3 lambda;
  if (off == 0.0) {
    lambda = s.diagonal();
  } else {
    const double p2 = (s(0, 0) - q) * (s(0, 0) - q) + (s(1, 1) - q) * (s(1, 1) - q) +
                      (s(2, 2) - q) * (s(2, 2) - q) + 2.0 * off;
    const double p = std::sqrt(p2 / 6.0);
    const Mat3 b = (s - q * Mat3::Identity()) / p;
    const double r = std::clamp(b.determinant() / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    lambda(0) = q + 2.0 * p * std::cos(phi);
    lambda(2) = q + 2.0 * p * std::cos(phi + 2.0 * kPi / 3.0);
    lambda(1) = 3.0 * q - lambda(0) - lambda(2);

    // Newton polish on det(s - x I) = -x^3 + c2 x^2 - c1 x + c0.
    const double c2 = s.trace();
    const double c1 = s(0, 0) * s(1, 1) - s(0, 1) * s(0, 1) + s(0, 0) * s(2, 2) - s(0, 2) * s(0, 2) +
                      s(1, 1) * s(2, 2) - s(1, 2) * s(1, 2);
    const double c0 = s.determinant();
    for (int k = 0; k < 3; ++k) {
      const double x = lambda(k);
      const double f = ((-x + c2) * x - c1) * x + c0;
      const double df = (-3.0 * x + 2.0 * c2) * x - c1;
      if (std::abs(df) > 1e-12 * std::max(1.0, p * p)) lambda(k) = x - f / df;
    }
  }
  std::sort(lambda.data(), lambda.data() + 3, [](double x, double y) { return x > y; });

  Sym3Eigen out;
  out.values = lambda;
  const Vec3 v0 = detail::canonical_sign(detail::null_vector(s, lambda(0)));
  // Second vector orthogonalized against the first so repeated roots stay a basis.
  Vec3 v1 = detail::null_vector(s, lambda(1));
  v1 -= v0 * v0.dot(v1);
  v1 = v1.squaredNorm() > 1e-20 ? Vec3(v1.normalized()) : detail::any_orthogonal(v0);
  v1 = detail::canonical_sign(v1);
  const Vec3 v2 = detail::canonical_sign(v0.cross(v1).normalized());
  out.vectors.col(0) = v0;
  out.vectors.col(1) = v1;
  out.vectors.col(2) = v2;
  // Rayleigh quotients recover full precision at repeated roots, where the
  // trigonometric roots lose about sqrt(eps) and Newton stalls (zero slope).
  if (off != 0.0)
    for (int k = 0; k < 3; ++k) out.values(k) = out.vectors.col(k).dot(s * out.vectors.col(k));
  return out;
}

}  // namespace p2pl

#endif  // P2PL_SYM3_EIGEN_HPP
