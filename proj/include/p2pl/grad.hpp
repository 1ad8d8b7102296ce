#ifndef P2PL_GRAD_HPP
#define P2PL_GRAD_HPP

// Closed-form Jacobians of the registration argmin g* = argmin E-hat(g), with
// E-hat = sum_i zeta_i ((R x_i + t - y_i) . n_i)^2 + lambda |R^T R - I|_F^2
// and g = (R row-major, t). By the implicit function theorem,
//   dg*/dq = -(d2E/dg2)^-1 d2E/(dq dg)   for q in {x_i, y_i, n_i, zeta_i}.

#include <p2pl/correspond.hpp>
#include <p2pl/error.hpp>
#include <p2pl/geom.hpp>
#include <p2pl/numeric.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace p2pl {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat12x6 = Eigen::Matrix<double, 12, 6>;

// ------------------------------------------------------------------ notation

/// x-hat = (1_3 (x) x ; 1)
inline Vec12 x_hat(const Vec3& x) {
  Vec12 v;
  v << x, x, x, 1.0, 1.0, 1.0;
  return v;
}

/// n-hat = (n (x) 1_3 ; n)
inline Vec12 n_hat(const Vec3& n) {
  Vec12 v;
  v << Vec3::Constant(n.x()), Vec3::Constant(n.y()), Vec3::Constant(n.z()), n;
  return v;
}

/// X-hat = (I_3 (x) x ; I_3), 12 x 3.
inline Mat12x3 x_cap(const Vec3& x) {
  Mat12x3 m = Mat12x3::Zero();
  for (int k = 0; k < 3; ++k) m.block<3, 1>(3 * k, k) = x;
  m.bottomRows<3>().setIdentity();
  return m;
}

/// R-hat = [1_{3x3} (x) r_0^T, 1_{3x3} (x) r_1^T, 1_{3x3} (x) r_2^T], 9 x 9.
inline Mat9 r_hat(const Mat3& r) {
  Mat9 m;
  for (int k = 0; k < 3; ++k)
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) m(3 * a + b, 3 * k + c) = r(k, b);
  return m;
}

/// M = R-hat (.) R-hat^T + I_9 + (R R^T - I) (x) I_3 + I_3 (x) (R^T R - I);
/// 4 lambda M is the Hessian of lambda * penalty(R) in vec(R).
inline Mat9 penalty_curvature(const Mat3& r) {
  const Mat9 rh = r_hat(r);
  Mat9 m = rh.cwiseProduct(rh.transpose()) + Mat9::Identity();
  const Mat3 a = r * r.transpose() - Mat3::Identity();
  const Mat3 b = r.transpose() * r - Mat3::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      m.block<3, 3>(3 * i, 3 * j).diagonal().array() += a(i, j);
      m.block<3, 3>(3 * i, 3 * j) += (i == j ? 1.0 : 0.0) * b;
    }
  return m;
}

/// Row-major flattening of a 3x3 matrix.
inline Vec9 vec_rows(const Mat3& m) {
  Vec9 v;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v(3 * i + j) = m(i, j);
  return v;
}

inline Mat3 unvec_rows(const Eigen::Ref<const Vec9>& v) {
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = v(3 * i + j);
  return m;
}

// ------------------------------------------------------------------ penalty

/// P(R) = |R^T R - I|_F^2
inline double penalty(const Mat3& r) { return (r.transpose() * r - Mat3::Identity()).squaredNorm(); }

/// dP/dvec(R) = vec(4 R (R^T R - I)).
inline Vec9 penalty_gradient(const Mat3& r) { return vec_rows(4.0 * r * (r.transpose() * r - Mat3::Identity())); }

namespace detail {
inline void check_grad_inputs(const CorrespondenceSet& corr, std::span<const Vec3> source) {
  if (corr.size() != source.size() || corr.normals.size() != source.size() || corr.weights.size() != source.size())
    throw std::invalid_argument("correspondence count must equal source point count");
}
}  // namespace detail

/// Per-pair quantities shared by every derivative: f_i = n-hat (.) x-hat, so
/// f_i . g = (R x_i + t) . n_i, and the signed residual r_i.
struct GradWorkspace {
  Mat3 rotation;
  Vec3 translation;
  std::vector<Vec12> features;
  std::vector<Vec3> offsets;  // R x_i + t - y_i
  std::vector<double> residuals;

  GradWorkspace(const CorrespondenceSet& corr, std::span<const Vec3> source, const GVector& g)
      : rotation(rotation_of(g)), translation(g.tail<3>()) {
    detail::check_grad_inputs(corr, source);
    features.resize(source.size());
    offsets.resize(source.size());
    residuals.resize(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) {
      features[i] = n_hat(corr.normals[i]).cwiseProduct(x_hat(source[i]));
      offsets[i] = rotation * source[i] + translation - corr.points[i];
      residuals[i] = offsets[i].dot(corr.normals[i]);
    }
  }
};

/// dE/dg = 2 sum_i zeta_i r_i f_i (data term only).
inline Vec12 data_gradient(const CorrespondenceSet& corr, std::span<const Vec3> source, const GVector& g) {
  const GradWorkspace ws(corr, source, g);
  CompensatedMatrixSum<Vec12> sum;
  for (std::size_t i = 0; i < source.size(); ++i) sum.add(2.0 * corr.weights[i] * ws.residuals[i] * ws.features[i]);
  return sum.value();
}

/// Least-squares penalty weight fitting dE/dR + lambda dP/dR = 0 on the nine
/// rotation entries: |dP . dE| / |dP . dP|, and 0 when |dP . dP| < 1e-24
/// (numerically orthogonal R, where the ratio is 0/0).
inline double penalty_lambda(const CorrespondenceSet& corr, std::span<const Vec3> source, const GVector& g) {
  const Vec9 de = data_gradient(corr, source, g).head<9>();
  const Vec9 dp = penalty_gradient(rotation_of(g));
  const double den = dp.dot(dp);
  if (den < 1e-24) return 0.0;
  return std::abs(dp.dot(de)) / den;
}

/// d2E-hat/dg2 = 2 sum_i zeta_i f_i f_i^T + 4 lambda [M 0; 0 0].
inline Mat12 hessian(const CorrespondenceSet& corr, std::span<const Vec3> source, const GVector& g, double lambda) {
  const GradWorkspace ws(corr, source, g);
  Mat12 h = Mat12::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) h.noalias() += (2.0 * corr.weights[i]) * ws.features[i] * ws.features[i].transpose();
  if (lambda != 0.0) h.topLeftCorner<9, 9>() += 4.0 * lambda * penalty_curvature(ws.rotation);
  return h;
}

// ----------------------------------------------------------- cross terms

/// Mixed second derivatives d2E-hat/(dq dg) for one pair.
struct CrossDerivatives {
  Mat12x3 d_y;
  Mat12x3 d_n;
  Mat12x3 d_x;
  Vec12 d_zeta;
};

inline CrossDerivatives cross_derivs(const GradWorkspace& ws, const CorrespondenceSet& corr,
                                     std::span<const Vec3> source, std::size_t i) {
  const double z = corr.weights[i];
  const Vec3& n = corr.normals[i];
  const Vec12& f = ws.features[i];
  const double r = ws.residuals[i];
  CrossDerivatives c;
  c.d_y = -2.0 * z * f * n.transpose();
  c.d_n = 2.0 * z * (f * ws.offsets[i].transpose() + r * x_cap(source[i]));
  c.d_x = 2.0 * z * f * (ws.rotation.transpose() * n).transpose();
  for (int k = 0; k < 3; ++k) c.d_x.block<3, 3>(3 * k, 0).diagonal().array() += 2.0 * z * r * n(k);
  c.d_zeta = 2.0 * r * f;
  return c;
}

inline std::vector<CrossDerivatives> cross_derivs(const CorrespondenceSet& corr, std::span<const Vec3> source,
                                                  const GVector& g) {
  const GradWorkspace ws(corr, source, g);
  std::vector<CrossDerivatives> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) out.push_back(cross_derivs(ws, corr, source, i));
  return out;
}

// ----------------------------------------------------------------- backward

enum class PenaltyMode {
  /// lambda -> infinity: solve on the kernel of the penalty curvature (the
  /// SE(3) tangent dR = K(w) R, dt free), with the finite lambda (R^T R - I)
  /// curvature taken at its stationarity limit.
  stiff,
  /// Invert hessian(lambda) with lambda from penalty_lambda(); at orthogonal R
  /// lambda clamps to 0 and this differentiates the unconstrained affine fit.
  literal,
};

struct BackwardOptions {
  PenaltyMode penalty = PenaltyMode::stiff;
  /// Added to the diagonal of the factored Hessian.
  double damping = 0.0;
};

struct GradientBundle {
  std::vector<Mat12x3> d_g_d_x;
  std::vector<Mat12x3> d_g_d_y;
  std::vector<Mat12x3> d_g_d_n;
  std::vector<Vec12> d_g_d_zeta;
  double lambda = 0.0;
  /// hessian(lambda), 12 x 12.
  Mat12 hessian = Mat12::Zero();
  /// Hessian restricted to the tangent basis (stiff mode only).
  Mat6 reduced_hessian = Mat6::Zero();
  Mat12x6 tangent_basis = Mat12x6::Zero();
  PenaltyMode mode = PenaltyMode::stiff;

  std::size_t size() const { return d_g_d_y.size(); }
};

/// Tangent of SE(3) at (R, t) in g coordinates: vec(K(e_k) R) for k < 3,
/// unit translations for k >= 3.
inline Mat12x6 tangent_basis(const Mat3& r) {
  Mat12x6 v = Mat12x6::Zero();
  for (int k = 0; k < 3; ++k) v.block<9, 1>(0, k) = vec_rows(skew(Vec3::Unit(k)) * r);
  v.block<3, 3>(9, 3).setIdentity();
  return v;
}

/// Jacobians of the solved transform w.r.t. every input, at g from a
/// completed forward solve. One factorization is shared by all pairs; the
/// cost does not depend on how g was obtained.
inline GradientBundle backward(const CorrespondenceSet& corr, std::span<const Vec3> source, const GVector& g,
                               const BackwardOptions& opt = {}) {
  const GradWorkspace ws(corr, source, g);
  const std::size_t n = source.size();

  GradientBundle out;
  out.mode = opt.penalty;
  out.lambda = penalty_lambda(corr, source, g);
  out.hessian = hessian(corr, source, g, out.lambda);

  auto check_pivots = [](const auto& ldlt) {
    const auto d = ldlt.vectorD().cwiseAbs().eval();
    const double dmax = d.maxCoeff();
    if (ldlt.info() != Eigen::Success || !(dmax > 0.0) || d.minCoeff() < 1e-14 * dmax)
      throw SingularHessian("registration Hessian is singular (degenerate geometry); retry with damping");
  };

  out.d_g_d_x.resize(n);
  out.d_g_d_y.resize(n);
  out.d_g_d_n.resize(n);
  out.d_g_d_zeta.resize(n);

  if (opt.penalty == PenaltyMode::literal) {
    Mat12 h = out.hessian;
    h.diagonal().array() += opt.damping;
    const Eigen::LDLT<Mat12> ldlt(h);
    check_pivots(ldlt);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = cross_derivs(ws, corr, source, i);
      out.d_g_d_x[i] = -ldlt.solve(c.d_x);
      out.d_g_d_y[i] = -ldlt.solve(c.d_y);
      out.d_g_d_n[i] = -ldlt.solve(c.d_n);
      out.d_g_d_zeta[i] = -ldlt.solve(c.d_zeta);
    }
    return out;
  }

  // Stiff penalty: restrict to the tangent basis V. The data term contributes
  // V^T H_E V; the lambda (R^T R - I) terms of M, at the penalized optimum,
  // contribute <dE/dR, sym(K_i K_j) R> on the rotation block.
  const Mat12x6 v = tangent_basis(ws.rotation);
  out.tangent_basis = v;
  Mat12 h_data = Mat12::Zero();
  CompensatedMatrixSum<Vec12> grad_sum;
  for (std::size_t i = 0; i < n; ++i) {
    h_data.noalias() += (2.0 * corr.weights[i]) * ws.features[i] * ws.features[i].transpose();
    grad_sum.add(2.0 * corr.weights[i] * ws.residuals[i] * ws.features[i]);
  }
  const Mat3 de_dr = unvec_rows(grad_sum.value().head<9>());
  Mat6 hr = v.transpose() * h_data * v;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const Mat3 ka = skew(Vec3::Unit(a)), kb = skew(Vec3::Unit(b));
      hr(a, b) += (de_dr.cwiseProduct(0.5 * (ka * kb + kb * ka) * ws.rotation)).sum();
    }
  hr.diagonal().array() += opt.damping;
  out.reduced_hessian = hr;
  const Eigen::LDLT<Mat6> ldlt(hr);
  check_pivots(ldlt);
  const Eigen::Matrix<double, 6, 12> vt = v.transpose();
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cross_derivs(ws, corr, source, i);
    out.d_g_d_x[i] = -v * ldlt.solve(vt * c.d_x);
    out.d_g_d_y[i] = -v * ldlt.solve(vt * c.d_y);
    out.d_g_d_n[i] = -v * ldlt.solve(vt * c.d_n);
    out.d_g_d_zeta[i] = -v * ldlt.solve(vt * c.d_zeta);
  }
  return out;
}

// ------------------------------------------------------------------- chain

/// dL/dq for every input q, given dL/dg.
struct PointGradients {
  std::vector<Vec3> d_x;
  std::vector<Vec3> d_y;
  std::vector<Vec3> d_n;
  std::vector<double> d_zeta;
};

inline PointGradients chain_loss(const Vec12& d_loss_d_g, const GradientBundle& bundle) {
  PointGradients out;
  const std::size_t n = bundle.size();
  out.d_x.resize(n);
  out.d_y.resize(n);
  out.d_n.resize(n);
  out.d_zeta.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_x[i] = bundle.d_g_d_x[i].transpose() * d_loss_d_g;
    out.d_y[i] = bundle.d_g_d_y[i].transpose() * d_loss_d_g;
    out.d_n[i] = bundle.d_g_d_n[i].transpose() * d_loss_d_g;
    out.d_zeta[i] = bundle.d_g_d_zeta[i].dot(d_loss_d_g);
  }
  return out;
}

struct LossValue {
  double loss = 0.0;
  Vec12 d_loss_d_g = Vec12::Zero();
};

/// L = |R^T R_gt - I|_F^2 + |t - t_gt|^2 and its gradient in g.
inline LossValue rigid_motion_loss(const GVector& g, const RigidTransform& gt) {
  const Mat3 r = rotation_of(g);
  const Vec3 t = g.tail<3>();
  const Mat3 e = r.transpose() * gt.rotation - Mat3::Identity();
  LossValue out;
  out.loss = e.squaredNorm() + (t - gt.translation).squaredNorm();
  out.d_loss_d_g.head<9>() = vec_rows(2.0 * gt.rotation * e.transpose());
  out.d_loss_d_g.tail<3>() = 2.0 * (t - gt.translation);
  return out;
}

}  // namespace p2pl

#endif  // P2PL_GRAD_HPP
