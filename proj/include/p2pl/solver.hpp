#ifndef P2PL_SOLVER_HPP
#define P2PL_SOLVER_HPP

#include <p2pl/correspond.hpp>
#include <p2pl/error.hpp>
#include <p2pl/geom.hpp>
#include <p2pl/kdtree.hpp>
#include <p2pl/numeric.hpp>
#include <p2pl/point_cloud.hpp>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace p2pl {

namespace detail {
inline void check_pairs(const CorrespondenceSet& corr, std::span<const Vec3> source) {
  if (corr.size() != source.size() || corr.normals.size() != source.size() || corr.weights.size() != source.size())
    throw std::invalid_argument("correspondence count must equal source point count");
}
}  // namespace detail

/// E = sum_i zeta_i ((R x_i + t - y_i) . n_i)^2
inline double energy(const CorrespondenceSet& corr, std::span<const Vec3> source, const RigidTransform& t) {
  detail::check_pairs(corr, source);
  CompensatedSum e;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const double r = (t.apply(source[i]) - corr.points[i]).dot(corr.normals[i]);
    e.add(corr.weights[i] * r * r);
  }
  return e.value();
}

inline double energy(const CorrespondenceSet& corr, const PointCloud& source, const RigidTransform& t) {
  return energy(corr, source.positions, t);
}

/// Normal equations of the small-angle problem; unknowns ordered (a, t)
/// with a = theta * w.
struct LinearizedSystem {
  Mat6 a = Mat6::Zero();
  Vec6 b = Vec6::Zero();
};

/// A = sum zeta v v^T, b = sum zeta v ((y - x) . n), v = (x cross n; n).
inline LinearizedSystem assemble(const CorrespondenceSet& corr, std::span<const Vec3> source) {
  detail::check_pairs(corr, source);
  CompensatedMatrixSum<Mat6> a;
  CompensatedMatrixSum<Vec6> b;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3& x = source[i];
    const Vec3& n = corr.normals[i];
    Vec6 v;
    v << x.cross(n), n;
    const double w = corr.weights[i];
    a.add(w * (v * v.transpose()));
    b.add(w * (corr.points[i] - x).dot(n) * v);
  }
  LinearizedSystem sys;
  sys.a = a.value();
  sys.b = b.value();
  return sys;
}

inline LinearizedSystem assemble(const CorrespondenceSet& corr, const PointCloud& source) {
  return assemble(corr, source.positions);
}

struct StepResult {
  RigidTransform transform;
  Vec6 increment = Vec6::Zero();  // (a, t)
  bool condition_warning = false;
};

/// Solves A [a; t] = b by pivoted LDL^T and re-evaluates the exact Rodrigues
/// rotation from a. `damping` adds damping * I to A.
inline StepResult solve_step(const LinearizedSystem& sys, double damping = 0.0) {
  Mat6 a = sys.a;
  if (damping > 0.0) a.diagonal().array() += damping;
  const Eigen::LDLT<Mat6> ldlt(a);
  const Vec6 d = ldlt.vectorD().cwiseAbs();
  const double dmax = d.maxCoeff();
  if (ldlt.info() != Eigen::Success || !(dmax > 0.0) || d.minCoeff() < 1e-14 * dmax)
    throw SingularSystem("point-to-plane system is singular (degenerate geometry)");
  StepResult out;
  out.increment = ldlt.solve(sys.b);
  out.condition_warning = ldlt.rcond() < 1e-12;
  out.transform.rotation = rodrigues(AxisAngle(Vec3(out.increment.head<3>())));
  out.transform.translation = out.increment.tail<3>();
  return out;
}

struct RegisterOptions {
  int n_iters = 10;
  double damping = 0.0;
};

struct SolveReport {
  RigidTransform transform;
  /// Energy before the first iteration and after each one.
  std::vector<double> energy_trace;
  int iterations = 0;
  bool converged = false;
  /// First iteration whose step fell below the convergence threshold (0: never).
  int converged_iteration = 0;
  bool condition_warning = false;
};

inline constexpr double kStepTolerance = 1e-10;

/// Iterative accumulation: linearize around the currently transformed source,
/// solve, and fold the small motion into the running estimate
/// (R <- R_k R, t <- R_k t + t_k). Runs exactly n_iters iterations.
inline SolveReport register_p2pl(const CorrespondenceSet& corr, std::span<const Vec3> source,
                                 const RegisterOptions& opt = {}) {
  if (opt.n_iters < 1) throw std::invalid_argument("register_p2pl needs n_iters >= 1");
  detail::check_pairs(corr, source);
  SolveReport rep;
  rep.energy_trace.reserve(static_cast<std::size_t>(opt.n_iters) + 1);
  rep.energy_trace.push_back(energy(corr, source, rep.transform));
  std::vector<Vec3> moved(source.begin(), source.end());
  for (int k = 1; k <= opt.n_iters; ++k) {
    for (std::size_t i = 0; i < source.size(); ++i) moved[i] = rep.transform.apply(source[i]);
    StepResult step;
    try {
      step = solve_step(assemble(corr, moved), opt.damping);
    } catch (const SingularSystem&) {
      throw SingularSystem("point-to-plane system is singular (degenerate geometry)", k);
    }
    rep.transform = compose(step.transform, rep.transform);
    rep.condition_warning = rep.condition_warning || step.condition_warning;
    rep.iterations = k;
    rep.energy_trace.push_back(energy(corr, source, rep.transform));
    if (!rep.converged && step.increment.head<3>().norm() + step.increment.tail<3>().norm() < kStepTolerance) {
      rep.converged = true;
      rep.converged_iteration = k;
    }
  }
  return rep;
}

inline SolveReport register_p2pl(const CorrespondenceSet& corr, const PointCloud& source,
                                 const RegisterOptions& opt = {}) {
  return register_p2pl(corr, source.positions, opt);
}

/// Weighted Kabsch: minimizes sum zeta_i |R x_i + t - y_i|^2 with det(R) = +1.
inline RigidTransform register_procrustes(const CorrespondenceSet& corr, std::span<const Vec3> source) {
  detail::check_pairs(corr, source);
  CompensatedSum wsum;
  Vec3 cx = Vec3::Zero(), cy = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    wsum.add(corr.weights[i]);
    cx += corr.weights[i] * source[i];
    cy += corr.weights[i] * corr.points[i];
  }
  const double w = wsum.value();
  if (!(w > 0.0)) throw DegenerateConfiguration("procrustes: weights sum to zero");
  cx /= w;
  cy /= w;
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i)
    h += corr.weights[i] * (source[i] - cx) * (corr.points[i] - cy).transpose();
  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  if (!(s(0) > 0.0) || s(1) < 1e-12 * s(0))
    throw DegenerateConfiguration("procrustes: cross-covariance rank < 2 (collinear or coincident points)");
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;
  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = cy - t.rotation * cx;
  return t;
}

inline RigidTransform register_procrustes(const CorrespondenceSet& corr, const PointCloud& source) {
  return register_procrustes(corr, source.positions);
}

enum class Method { p2p, p2pl };

inline Method parse_method(std::string_view s) {
  if (s == "p2p") return Method::p2p;
  if (s == "p2pl") return Method::p2pl;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

inline const char* to_string(Method m) { return m == Method::p2p ? "p2p" : "p2pl"; }

struct IcpOptions {
  Method method = Method::p2pl;
  int max_outer = 30;
  int inner_iters = 10;
  double damping = 0.0;
  /// Optional per-source-point reliability weights.
  std::optional<std::vector<double>> weights;
};

struct IcpReport : SolveReport {
  /// Correspondences of the final outer iteration, against the source as
  /// transformed before that iteration.
  CorrespondenceSet last_correspondences;
  /// Source positions matching last_correspondences.
  std::vector<Vec3> last_source;
};

/// Classic ICP: nearest-neighbor correspondences on the transformed source,
/// then a Procrustes or point-to-plane solve, accumulated until the step
/// (rotation angle + translation norm) drops below 1e-10 or max_outer.
/// energy_trace holds the matching energy at the start of each outer step.
inline IcpReport icp(const PointCloud& source, const PointCloud& target, const IcpOptions& opt = {}) {
  if (source.empty() || target.empty()) throw std::invalid_argument("icp: empty cloud");
  if (opt.max_outer < 1) throw std::invalid_argument("icp: max_outer must be >= 1");
  if (opt.method == Method::p2pl && !target.has_normals()) throw MissingNormals("icp p2pl: target has no normals");
  if (opt.weights && opt.weights->size() != source.size())
    throw std::invalid_argument("icp: one weight per source point");

  PointCloud tgt = target;
  if (!tgt.has_normals()) tgt.normals.assign(tgt.size(), Vec3::UnitZ());  // unused by p2p
  const KdTree tree(tgt.positions);

  IcpReport rep;
  std::vector<Vec3> moved;
  for (int k = 1; k <= opt.max_outer; ++k) {
    moved = p2pl::apply(rep.transform, std::span<const Vec3>(source.positions));
    CorrespondenceSet corr = nn_correspond(moved, tgt, tree);
    if (opt.weights) corr.weights = *opt.weights;

    RigidTransform delta;
    if (opt.method == Method::p2p) {
      CompensatedSum e;
      for (std::size_t i = 0; i < moved.size(); ++i) e.add(corr.weights[i] * (moved[i] - corr.points[i]).squaredNorm());
      rep.energy_trace.push_back(e.value());
      delta = register_procrustes(corr, moved);
    } else {
      rep.energy_trace.push_back(energy(corr, moved, RigidTransform::identity()));
      RegisterOptions ro;
      ro.n_iters = opt.inner_iters;
      ro.damping = opt.damping;
      const auto inner = register_p2pl(corr, moved, ro);
      rep.condition_warning = rep.condition_warning || inner.condition_warning;
      delta = inner.transform;
    }
    rep.transform = compose(delta, rep.transform);
    rep.iterations = k;
    rep.last_correspondences = std::move(corr);
    rep.last_source = std::move(moved);
    const double step = log_rotation(delta.rotation).angle() + delta.translation.norm();
    if (step < kStepTolerance) {
      rep.converged = true;
      rep.converged_iteration = k;
      break;
    }
  }
  return rep;
}

}  // namespace p2pl

#endif  // P2PL_SOLVER_HPP
