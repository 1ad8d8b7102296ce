#include <p2pl/grad.hpp>
#include <p2pl/gradcheck.hpp>
#include <p2pl/solver.hpp>

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace p2pl;

namespace {

GVector random_g(Rng& rng, double off_orthogonal = 0.0) {
  GVector g = to_gvector(test::random_rigid(rng));
  for (int k = 0; k < 9; ++k) g(k) += off_orthogonal * rng.normal();
  return g;
}

/// Solved, noisy, nondegenerate instance and its converged g.
struct Solved {
  GradcheckInstance inst;
  GVector g;
};

Solved solved_instance(std::uint64_t seed, std::size_t n = 48, int iters = 10) {
  Solved s;
  s.inst = make_gradcheck_instance(seed, n);
  FDConfig cfg;
  cfg.n_iters_forward = iters;
  s.g = solve_g(s.inst.corr, s.inst.source, cfg);
  return s;
}

/// grad of E-hat with fixed lambda.
Vec12 full_gradient(const CorrespondenceSet& c, std::span<const Vec3> x, const GVector& g, double lambda) {
  Vec12 d = data_gradient(c, x, g);
  d.head<9>() += lambda * penalty_gradient(rotation_of(g));
  return d;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& ref) {
  return (a - ref).norm() / std::max(ref.norm(), 1e-300);
}

}  // namespace

// ----------------------------------------------------------------- notation

TEST(Notation, FeatureDotGIsTransformedProjection) {
  Rng rng(1);
  for (int c = 0; c < 100; ++c) {
    const Vec3 x = test::gauss3(rng), n = rng.unit_vector();
    const GVector g = random_g(rng, 0.3);
    const Mat3 r = rotation_of(g);
    const double want = (r * x + g.tail<3>()).dot(n);
    EXPECT_NEAR(n_hat(n).cwiseProduct(x_hat(x)).dot(g), want, 1e-12);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR((x_cap(x).transpose() * g)(k), (r * x + g.tail<3>())(k), 1e-12);
  }
}

TEST(Notation, VecRowsRoundTrip) {
  Rng rng(2);
  const Mat3 m = test::random_rotation(rng) * 1.7;
  EXPECT_EQ(unvec_rows(vec_rows(m)), m);
  EXPECT_EQ(vec_rows(m)(1), m(0, 1));
}

// ------------------------------------------------------------------ penalty

TEST(Penalty, Examples) {
  Rng rng(3);
  for (int c = 0; c < 50; ++c) EXPECT_LE(penalty(test::random_rotation(rng)), 1e-18);
  EXPECT_NEAR(penalty(2.0 * Mat3::Identity()), 27.0, 1e-15);
}

TEST(Penalty, MatchesElementwiseOracle) {
  Rng rng(4);
  for (int c = 0; c < 50; ++c) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = rng.normal();
    double want = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += r(k, i) * r(k, j);
        s -= i == j ? 1.0 : 0.0;
        want += s * s;
      }
    EXPECT_NEAR(penalty(r), want, 1e-12 * std::max(1.0, want));
  }
}

TEST(Penalty, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  const double h = 1e-6;
  for (int c = 0; c < 20; ++c) {
    const Vec9 v = vec_rows(test::random_rotation(rng)) + 0.2 * Vec9::Random();
    Vec9 fd;
    for (int k = 0; k < 9; ++k) {
      Vec9 a = v, b = v;
      a(k) += h;
      b(k) -= h;
      fd(k) = (penalty(unvec_rows(a)) - penalty(unvec_rows(b))) / (2 * h);
    }
    EXPECT_LE(rel_err(penalty_gradient(unvec_rows(v)), fd), 1e-7);
  }
}

TEST(PenaltyCurvature, IsQuarterOfPenaltyHessian) {
  Rng rng(6);
  const double h = 1e-5;
  for (int c = 0; c < 20; ++c) {
    const Vec9 v = vec_rows(test::random_rotation(rng)) + 0.3 * Vec9::Random();
    const Mat9 m = penalty_curvature(unvec_rows(v));
    EXPECT_LE((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-12);
    Mat9 fd;
    for (int k = 0; k < 9; ++k) {
      Vec9 a = v, b = v;
      a(k) += h;
      b(k) -= h;
      fd.col(k) = (penalty_gradient(unvec_rows(a)) - penalty_gradient(unvec_rows(b))) / (2 * h);
    }
    EXPECT_LE(rel_err(4.0 * m, fd), 1e-8);
  }
}

TEST(PenaltyCurvature, OrthogonalDropsKroneckerTerms) {
  Rng rng(7);
  const Mat3 r = test::random_rotation(rng);
  const Mat9 rh = r_hat(r);
  EXPECT_LE((penalty_curvature(r) - (rh.cwiseProduct(rh.transpose()) + Mat9::Identity())).cwiseAbs().maxCoeff(),
            1e-14);
}

TEST(PenaltyCurvature, TangentDirectionsAreFlat) {
  Rng rng(8);
  const Mat3 r = test::random_rotation(rng);
  const Mat12x6 v = tangent_basis(r);
  const Mat9 m = penalty_curvature(r);
  EXPECT_LE((m * v.topLeftCorner<9, 3>()).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(Mat3(v.bottomRightCorner<3, 3>()), Mat3::Identity());
}

// ------------------------------------------------------------------- lambda

TEST(PenaltyLambda, ClampAtOrthogonalR) {
  Rng rng(9);
  const auto x = test::random_points(rng, 30);
  const auto gt = test::random_rigid(rng);
  const auto corr = test::noisy_pairs(rng, x, gt, 0.0);
  EXPECT_EQ(penalty_lambda(corr, x, to_gvector(gt)), 0.0);
}

TEST(PenaltyLambda, PerturbedIsFiniteNonNegative) {
  const auto s = solved_instance(10);
  Rng rng(10);
  GVector g = s.g;
  for (int k = 0; k < 9; ++k) g(k) += 1e-6 * rng.normal();
  const double l = penalty_lambda(s.inst.corr, s.inst.source, g);
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GE(l, 0.0);
}

TEST(PenaltyLambda, MatchesLeastSquaresOracle) {
  Rng rng(11);
  for (int c = 0; c < 20; ++c) {
    const auto s = solved_instance(100 + c);
    GVector g = s.g;
    for (int k = 0; k < 9; ++k) g(k) += 1e-3 * rng.normal();
    const Vec9 de = data_gradient(s.inst.corr, s.inst.source, g).head<9>();
    const Vec9 dp = penalty_gradient(rotation_of(g));
    // min_l |de + l dp|^2 via a 1-column least-squares solve.
    const Eigen::Matrix<double, 9, 1> a = dp;
    const double l_ls = a.colPivHouseholderQr().solve(-de)(0);
    EXPECT_NEAR(penalty_lambda(s.inst.corr, s.inst.source, g), std::abs(l_ls), 1e-9 * std::max(1.0, std::abs(l_ls)));
  }
}

// ------------------------------------------------------------------ hessian

TEST(Hessian, MatchesFiniteDifferenceOfGradient) {
  Rng rng(12);
  const double h = 1e-5;
  for (int c = 0; c < 10; ++c) {
    const auto x = test::random_points(rng, 40);
    const auto corr = test::noisy_pairs(rng, x, test::random_rigid(rng), 0.1);
    const GVector g = random_g(rng, 0.05);
    const double lambda = rng.uniform(0.0, 3.0);
    const Mat12 hs = hessian(corr, x, g, lambda);
    Mat12 fd;
    for (int k = 0; k < 12; ++k) {
      GVector a = g, b = g;
      a(k) += h;
      b(k) -= h;
      fd.col(k) = (full_gradient(corr, x, a, lambda) - full_gradient(corr, x, b, lambda)) / (2 * h);
    }
    EXPECT_LE(rel_err(hs, fd), 1e-5);
    EXPECT_LE((hs - hs.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Hessian, DataTermIsPsd) {
  Rng rng(13);
  for (int c = 0; c < 20; ++c) {
    const auto x = test::random_points(rng, 30);
    const auto corr = test::noisy_pairs(rng, x, test::random_rigid(rng), 0.1);
    const Mat12 hs = hessian(corr, x, random_g(rng), 0.0);
    const Eigen::SelfAdjointEigenSolver<Mat12> es(hs);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * std::max(1.0, es.eigenvalues().maxCoeff()));
  }
}

// ------------------------------------------------------------- cross derivs

TEST(CrossDerivs, MatchFiniteDifferences) {
  Rng rng(14);
  const double h = 1e-5;
  const auto x = test::random_points(rng, 25);
  const auto corr = test::noisy_pairs(rng, x, test::random_rigid(rng), 0.1);
  const GVector g = random_g(rng, 0.05);
  const double lambda = 0.7;
  const auto cd = cross_derivs(corr, x, g);
  for (std::size_t i : {0u, 7u, 24u}) {
    Mat12x3 fx, fy, fn;
    Vec12 fz;
    for (int k = 0; k < 3; ++k) {
      for (int which = 0; which < 3; ++which) {
        auto cp = corr, cm = corr;
        auto xp = x, xm = x;
        if (which == 0) xp[i](k) += h, xm[i](k) -= h;
        if (which == 1) cp.points[i](k) += h, cm.points[i](k) -= h;
        if (which == 2) cp.normals[i](k) += h, cm.normals[i](k) -= h;
        const Vec12 d = (full_gradient(cp, xp, g, lambda) - full_gradient(cm, xm, g, lambda)) / (2 * h);
        (which == 0 ? fx : which == 1 ? fy : fn).col(k) = d;
      }
    }
    auto cp = corr, cm = corr;
    cp.weights[i] += h;
    cm.weights[i] -= h;
    fz = (full_gradient(cp, x, g, lambda) - full_gradient(cm, x, g, lambda)) / (2 * h);
    EXPECT_LE(rel_err(cd[i].d_x, fx), 1e-5) << i;
    EXPECT_LE(rel_err(cd[i].d_y, fy), 1e-5) << i;
    EXPECT_LE(rel_err(cd[i].d_n, fn), 1e-5) << i;
    EXPECT_LE(rel_err(cd[i].d_zeta, fz), 1e-5) << i;
  }
}

TEST(CrossDerivs, ZeroResidualPair) {
  Rng rng(15);
  const auto x = test::random_points(rng, 5);
  const auto gt = test::random_rigid(rng);
  auto corr = test::noisy_pairs(rng, x, gt, 0.0);
  const GVector g = to_gvector(gt);
  const GradWorkspace ws(corr, x, g);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto c = cross_derivs(ws, corr, x, i);
    EXPECT_LE(c.d_zeta.cwiseAbs().maxCoeff(), 1e-14);
    const Vec12 f = ws.features[i];
    EXPECT_LE((c.d_n - 2.0 * corr.weights[i] * f * ws.offsets[i].transpose()).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((c.d_x - 2.0 * corr.weights[i] * f * (gt.rotation.transpose() * corr.normals[i]).transpose())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-14);
  }
}

TEST(CrossDerivs, DoublingZetaDoublesBlocks) {
  Rng rng(16);
  const auto x = test::random_points(rng, 6);
  auto corr = test::noisy_pairs(rng, x, test::random_rigid(rng), 0.2);
  const GVector g = random_g(rng);
  const auto a = cross_derivs(corr, x, g);
  corr.weights[3] *= 2.0;
  const auto b = cross_derivs(corr, x, g);
  EXPECT_EQ(b[3].d_y, 2.0 * a[3].d_y);
  EXPECT_EQ(b[3].d_n, 2.0 * a[3].d_n);
  EXPECT_EQ(b[3].d_x, 2.0 * a[3].d_x);
  EXPECT_EQ(b[3].d_zeta, a[3].d_zeta);
  EXPECT_EQ(b[2].d_y, a[2].d_y);
}

// ----------------------------------------------------------------- backward

TEST(Backward, MatchesFiniteDifferenceOracle) {
  FDConfig cfg;
  cfg.n_iters_forward = 10;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = make_gradcheck_instance(seed, 32);
    const auto rep = run_gradcheck_case(inst, cfg);
    EXPECT_LE(rep.rel_mse, 1e-4) << seed;
    for (auto k : kAllInputKinds) EXPECT_LE(rep[k].rel_mse, 1e-4) << seed << ' ' << to_string(k);
  }
}

TEST(Backward, LiteralPenaltyModeDisagreesWithOracle) {
  FDConfig cfg;
  BackwardOptions lit;
  lit.penalty = PenaltyMode::literal;
  const auto inst = make_gradcheck_instance(3, 32);
  const auto stiff = run_gradcheck_case(inst, cfg);
  const auto literal = run_gradcheck_case(inst, cfg, lit);
  EXPECT_GT(literal.rel_mse, 1e-2);
  EXPECT_LT(stiff.rel_mse, 1e-3 * literal.rel_mse);
}

TEST(Backward, BundleShapesAndFiniteness) {
  const auto s = solved_instance(20, 40);
  const auto b = backward(s.inst.corr, s.inst.source, s.g);
  ASSERT_EQ(b.size(), 40u);
  EXPECT_GE(b.lambda, 0.0);
  EXPECT_LE((b.hessian - b.hessian.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_TRUE(b.d_g_d_x[i].allFinite());
    EXPECT_TRUE(b.d_g_d_y[i].allFinite());
    EXPECT_TRUE(b.d_g_d_n[i].allFinite());
    EXPECT_TRUE(b.d_g_d_zeta[i].allFinite());
  }
}

TEST(Backward, ConjugationEquivariance) {
  Rng rng(21);
  for (int c = 0; c < 20; ++c) {
    const auto s = solved_instance(300 + c, 40);
    const Mat3 q = test::random_rotation(rng);
    std::vector<Vec3> qx;
    for (const auto& p : s.inst.source) qx.push_back(q * p);
    CorrespondenceSet qc = s.inst.corr;
    for (auto& p : qc.points) p = q * p;
    for (auto& n : qc.normals) n = q * n;
    const RigidTransform qgt{q * s.inst.gt.rotation * q.transpose(), q * s.inst.gt.translation};
    const GVector qg = solve_g(qc, qx, FDConfig{});

    const auto base = chain_loss(rigid_motion_loss(s.g, s.inst.gt).d_loss_d_g, backward(s.inst.corr, s.inst.source, s.g));
    const auto conj = chain_loss(rigid_motion_loss(qg, qgt).d_loss_d_g, backward(qc, qx, qg));
    double scale = 0.0;
    for (std::size_t i = 0; i < base.d_y.size(); ++i) scale = std::max(scale, base.d_y[i].norm());
    for (std::size_t i = 0; i < base.d_y.size(); ++i) {
      EXPECT_LE((conj.d_x[i] - q * base.d_x[i]).norm(), 1e-8 * std::max(1.0, scale));
      EXPECT_LE((conj.d_y[i] - q * base.d_y[i]).norm(), 1e-8 * std::max(1.0, scale));
      EXPECT_LE((conj.d_n[i] - q * base.d_n[i]).norm(), 1e-8 * std::max(1.0, scale));
      EXPECT_NEAR(conj.d_zeta[i], base.d_zeta[i], 1e-8 * std::max(1.0, scale));
    }
  }
}

TEST(Backward, PlaneThrowsSingularHessian) {
  Rng rng(22);
  std::vector<Vec3> x, y, n;
  for (int i = 0; i < 40; ++i) {
    x.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0);
    y.push_back(x.back());
    n.push_back(Vec3::UnitZ());
  }
  const auto corr = CorrespondenceSet::unweighted(y, n);
  EXPECT_THROW(backward(corr, x, to_gvector(RigidTransform::identity())), SingularHessian);
  BackwardOptions damped;
  damped.damping = 1e-6;
  EXPECT_NO_THROW(backward(corr, x, to_gvector(RigidTransform::identity()), damped));
}

// -------------------------------------------------------------------- chain

TEST(ChainLoss, ZeroAndLinearity) {
  const auto s = solved_instance(30, 20);
  const auto b = backward(s.inst.corr, s.inst.source, s.g);
  const auto z = chain_loss(Vec12::Zero(), b);
  for (std::size_t i = 0; i < b.size(); ++i) {
    EXPECT_EQ(z.d_x[i], Vec3::Zero());
    EXPECT_EQ(z.d_y[i], Vec3::Zero());
    EXPECT_EQ(z.d_n[i], Vec3::Zero());
    EXPECT_EQ(z.d_zeta[i], 0.0);
  }
  Rng rng(31);
  Vec12 u, v;
  for (int k = 0; k < 12; ++k) u(k) = rng.normal(), v(k) = rng.normal();
  const double al = 1.5, be = -0.25;
  const auto cu = chain_loss(u, b), cv = chain_loss(v, b), cw = chain_loss(al * u + be * v, b);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double sc = 1e-12 * (1.0 + cu.d_y[i].norm() + cv.d_y[i].norm() + cu.d_x[i].norm() + cu.d_n[i].norm());
    EXPECT_LE((cw.d_x[i] - (al * cu.d_x[i] + be * cv.d_x[i])).norm(), sc);
    EXPECT_LE((cw.d_y[i] - (al * cu.d_y[i] + be * cv.d_y[i])).norm(), sc);
    EXPECT_LE((cw.d_n[i] - (al * cu.d_n[i] + be * cv.d_n[i])).norm(), sc);
    EXPECT_NEAR(cw.d_zeta[i], al * cu.d_zeta[i] + be * cv.d_zeta[i], sc);
  }
}

TEST(ChainLoss, EndToEndFiniteDifference) {
  const auto s = solved_instance(32, 24);
  const auto b = backward(s.inst.corr, s.inst.source, s.g);
  const auto grads = chain_loss(rigid_motion_loss(s.g, s.inst.gt).d_loss_d_g, b);
  const FDConfig cfg;
  auto loss_at = [&](const CorrespondenceSet& c, const std::vector<Vec3>& x) {
    return rigid_motion_loss(solve_g(c, x, cfg), s.inst.gt).loss;
  };
  std::vector<double> an, fd;
  const double h = 1e-5;
  for (std::size_t i = 0; i < s.inst.source.size(); i += 5)
    for (int k = 0; k < 3; ++k) {
      auto cp = s.inst.corr, cm = s.inst.corr;
      cp.points[i](k) += h;
      cm.points[i](k) -= h;
      fd.push_back((loss_at(cp, s.inst.source) - loss_at(cm, s.inst.source)) / (2 * h));
      an.push_back(grads.d_y[i](k));
    }
  double err = 0.0, ref = 0.0;
  for (std::size_t j = 0; j < an.size(); ++j) {
    err += (an[j] - fd[j]) * (an[j] - fd[j]);
    ref += fd[j] * fd[j];
  }
  EXPECT_LE(err / ref, 1e-4);
}

// --------------------------------------------------------- rigid motion loss

TEST(RigidMotionLoss, Examples) {
  Rng rng(40);
  const auto gt = test::random_rigid(rng);
  const auto at = rigid_motion_loss(to_gvector(gt), gt);
  EXPECT_LE(at.loss, 1e-28);
  EXPECT_EQ(at.d_loss_d_g.tail<3>(), Vec3::Zero());
  const RigidTransform off{gt.rotation, gt.translation + Vec3(0, 0, 0.5)};
  EXPECT_NEAR(rigid_motion_loss(to_gvector(off), gt).loss, 0.25, 1e-15);
}

TEST(RigidMotionLoss, GradientMatchesFiniteDifferences) {
  Rng rng(41);
  const double h = 1e-6;
  for (int c = 0; c < 20; ++c) {
    const auto gt = test::random_rigid(rng);
    const GVector g = random_g(rng, 0.05);
    Vec12 fd;
    for (int k = 0; k < 12; ++k) {
      GVector a = g, b = g;
      a(k) += h;
      b(k) -= h;
      fd(k) = (rigid_motion_loss(a, gt).loss - rigid_motion_loss(b, gt).loss) / (2 * h);
    }
    EXPECT_LE(rel_err(rigid_motion_loss(g, gt).d_loss_d_g, fd), 1e-7);
  }
}
