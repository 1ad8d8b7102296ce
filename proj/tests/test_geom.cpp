#include <p2pl/geom.hpp>
#include <p2pl/point_cloud.hpp>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace p2pl;
using p2pl::test::gauss3;

namespace {

// 20-term exponential series, evaluated at K/2 and squared so the
// truncation error stays below 1e-11 for angles up to ~4.5 rad.
Mat3 exp_series(const Mat3& k) {
  const Mat3 half = 0.5 * k;
  Mat3 sum = Mat3::Identity(), term = Mat3::Identity();
  for (int n = 1; n < 20; ++n) {
    term = term * half / static_cast<double>(n);
    sum += term;
  }
  return sum * sum;
}

}  // namespace

TEST(Skew, Example) {
  Mat3 expected;
  expected << 0, -3, 2, 3, 0, -1, -2, 1, 0;
  EXPECT_EQ(skew(Vec3(1, 2, 3)), expected);
  EXPECT_EQ(skew(Vec3::Zero()), Mat3::Zero());
}

TEST(Skew, MatchesCrossProduct) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Vec3 w = gauss3(rng), v = gauss3(rng);
    const Vec3 cross(w.y() * v.z() - w.z() * v.y(), w.z() * v.x() - w.x() * v.z(), w.x() * v.y() - w.y() * v.x());
    EXPECT_LE((skew(w) * v - cross).norm(), 1e-15);
    EXPECT_EQ(skew(w), -skew(w).transpose());
    EXPECT_EQ(vee(skew(w)), w);
  }
}

TEST(Rodrigues, IdentityAndQuarterTurn) {
  EXPECT_EQ(rodrigues(AxisAngle(0.0, Vec3(0.3, -1, 2))), Mat3::Identity());
  EXPECT_EQ(rodrigues(AxisAngle(Vec3(1e-13, 0, 0))), Mat3::Identity());
  Mat3 expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  EXPECT_LE((rodrigues(AxisAngle(kPi / 2, Vec3::UnitZ())) - expected).norm(), 1e-15);
}

TEST(Rodrigues, MatchesExponentialSeries) {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a = gauss3(rng);
    const Mat3 r = rodrigues(AxisAngle(a));
    EXPECT_LE((r - exp_series(skew(a))).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((r.transpose() * r - Mat3::Identity()).norm(), 1e-9);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-9);
  }
}

TEST(LogRotation, Examples) {
  EXPECT_EQ(log_rotation(Mat3::Identity()).angle(), 0.0);
  const AxisAngle aa = log_rotation(rodrigues(AxisAngle(0.3, Vec3::UnitX())));
  EXPECT_LE((aa.vec - Vec3(0.3, 0, 0)).norm(), 1e-10);
}

TEST(LogRotation, RoundTrip1000) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double theta = rng.uniform(1e-9, kPi - 0.01);
    const Mat3 r = rodrigues(AxisAngle(theta, rng.unit_vector()));
    const AxisAngle back = log_rotation(r);
    EXPECT_GE(back.angle(), 0.0);
    EXPECT_LE(back.angle(), kPi);
    EXPECT_LE((rodrigues(back) - r).norm(), 1e-8);
  }
}

TEST(LogRotation, NearAntipode) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const double theta = kPi - rng.uniform(0.0, 2e-3);
    const Vec3 axis = rng.unit_vector();
    const Mat3 r = rodrigues(AxisAngle(theta, axis));
    const AxisAngle back = log_rotation(r);
    EXPECT_NEAR(back.angle(), theta, 1e-7);
    EXPECT_LE((rodrigues(back) - r).norm(), 1e-8);
  }
  const Mat3 half_turn = rodrigues(AxisAngle(kPi, Vec3(1, 1, 0)));
  EXPECT_NEAR(log_rotation(half_turn).angle(), kPi, 1e-12);
  EXPECT_LE((rodrigues(log_rotation(half_turn)) - half_turn).norm(), 1e-8);
}

TEST(Compose, IdentityInverseAssociativity) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const auto a = test::random_rigid(rng), b = test::random_rigid(rng), c = test::random_rigid(rng);
    const auto id = compose(RigidTransform::identity(), a);
    EXPECT_LE((id.rotation - a.rotation).norm() + (id.translation - a.translation).norm(), 0.0);
    const auto e = compose(a, a.inverse());
    EXPECT_LE((e.rotation - Mat3::Identity()).norm() + e.translation.norm(), 1e-12);
    const Vec3 p = gauss3(rng);
    EXPECT_LE((compose(a, b).apply(p) - a.apply(b.apply(p))).norm(), 1e-12);
    EXPECT_LE((compose(compose(a, b), c).apply(p) - compose(a, compose(b, c)).apply(p)).norm(), 1e-12);
  }
}

TEST(ApplyCloud, IdentityTranslationIsometry) {
  Rng rng(6);
  PointCloud cloud;
  cloud.positions = test::random_points(rng, 50);
  cloud.normals = test::random_units(rng, 50);

  const PointCloud same = apply(RigidTransform::identity(), cloud);
  EXPECT_EQ(same.positions, cloud.positions);
  EXPECT_EQ(same.normals, cloud.normals);

  const PointCloud shifted = apply(RigidTransform{Mat3::Identity(), Vec3(1, -2, 3)}, cloud);
  EXPECT_EQ(shifted.normals, cloud.normals);

  const auto t = test::random_rigid(rng);
  const PointCloud moved = apply(t, cloud);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_NEAR(moved.normals[i].norm(), 1.0, 1e-12);
    for (std::size_t j = 0; j < 50; j += 7) {
      const double before = cloud.normals[i].dot(cloud.positions[i] - cloud.positions[j]);
      const double after = moved.normals[i].dot(moved.positions[i] - moved.positions[j]);
      EXPECT_NEAR(before, after, 1e-12);
    }
  }
}

TEST(GVector, RowMajorLayout) {
  Rng rng(7);
  const auto t = test::random_rigid(rng);
  const GVector g = to_gvector(t);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(g(3 * i + j), t.rotation(i, j));
  EXPECT_EQ(g.tail<3>(), t.translation);
  const auto back = from_gvector(g);
  EXPECT_EQ(back.rotation, t.rotation);
  EXPECT_EQ(back.translation, t.translation);
}

TEST(Euler, ZyxComposition) {
  const double y = 0.3, p = -0.2, r = 0.7;
  const Mat3 rz = rodrigues(AxisAngle(y, Vec3::UnitZ()));
  const Mat3 ry = rodrigues(AxisAngle(p, Vec3::UnitY()));
  const Mat3 rx = rodrigues(AxisAngle(r, Vec3::UnitX()));
  EXPECT_LE((euler_zyx_to_matrix(y, p, r) - rz * ry * rx).norm(), 1e-15);
}

TEST(Geodesic, AngleOfRelativeRotation) {
  Rng rng(8);
  const Mat3 a = test::random_rotation(rng);
  EXPECT_NEAR(geodesic_angle(a, a * rodrigues(AxisAngle(0.25, rng.unit_vector()))), 0.25, 1e-12);
  EXPECT_TRUE(is_rotation(a));
  EXPECT_FALSE(is_rotation(2.0 * a));
}
