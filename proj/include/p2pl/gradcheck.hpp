#ifndef P2PL_GRADCHECK_HPP
#define P2PL_GRADCHECK_HPP

#include <p2pl/correspond.hpp>
#include <p2pl/grad.hpp>
#include <p2pl/rng.hpp>
#include <p2pl/solver.hpp>
#include <p2pl/synth.hpp>

#include <p2pl/numeric.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <limits>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2pl {

enum class InputKind { x = 0, y = 1, n = 2, zeta = 3 };

inline constexpr std::array<InputKind, 4> kAllInputKinds = {InputKind::x, InputKind::y, InputKind::n,
                                                            InputKind::zeta};

inline const char* to_string(InputKind k) {
  switch (k) {
    case InputKind::x: return "x";
    case InputKind::y: return "y";
    case InputKind::n: return "n";
    case InputKind::zeta: return "zeta";
  }
  return "?";
}

struct FDConfig {
  double step = 1e-5;
  int n_iters_forward = 10;
  /// Re-normalize perturbed normals (sensitivity studies only; the analytic
  /// derivative is taken w.r.t. the unconstrained normal).
  bool projected_normals = false;
  double damping = 0.0;
};

/// The argmin map being differentiated: inputs -> g of register_p2pl.
inline GVector solve_g(const CorrespondenceSet& corr, std::span<const Vec3> source, const FDConfig& cfg) {
  RegisterOptions ro;
  ro.n_iters = cfg.n_iters_forward;
  ro.damping = cfg.damping;
  return to_gvector(register_p2pl(corr, source, ro).transform);
}

/// Central differences of g over each coordinate of one input (12 x 3, or
/// 12 x 1 for zeta).
inline Eigen::Matrix<double, 12, Eigen::Dynamic> fd_jacobian(const CorrespondenceSet& corr,
                                                             std::span<const Vec3> source, InputKind which,
                                                             std::size_t index, const FDConfig& cfg) {
  if (!(cfg.step > 0.0)) throw std::invalid_argument("FD step must be positive");
  if (index >= source.size()) throw std::out_of_range("fd_jacobian: index out of range");
  const int dims = which == InputKind::zeta ? 1 : 3;
  Eigen::Matrix<double, 12, Eigen::Dynamic> jac(12, dims);
  CorrespondenceSet c = corr;
  std::vector<Vec3> x(source.begin(), source.end());
  for (int k = 0; k < dims; ++k) {
    GVector g[2];
    for (int side = 0; side < 2; ++side) {
      const double h = side == 0 ? cfg.step : -cfg.step;
      switch (which) {
        case InputKind::x: x[index](k) += h; break;
        case InputKind::y: c.points[index](k) += h; break;
        case InputKind::n:
          c.normals[index](k) += h;
          if (cfg.projected_normals) c.normals[index].normalize();
          break;
        case InputKind::zeta: c.weights[index] += h; break;
      }
      g[side] = solve_g(c, x, cfg);
      x[index] = source[index];
      c.points[index] = corr.points[index];
      c.normals[index] = corr.normals[index];
      c.weights[index] = corr.weights[index];
    }
    jac.col(k) = (g[0] - g[1]) / (2.0 * cfg.step);
  }
  return jac;
}

/// Finite-difference counterpart of GradientBundle.
struct FdBundle {
  std::vector<Mat12x3> d_g_d_x;
  std::vector<Mat12x3> d_g_d_y;
  std::vector<Mat12x3> d_g_d_n;
  std::vector<Vec12> d_g_d_zeta;
};

inline FdBundle fd_bundle(const CorrespondenceSet& corr, std::span<const Vec3> source, const FDConfig& cfg) {
  FdBundle out;
  const std::size_t n = source.size();
  out.d_g_d_x.resize(n);
  out.d_g_d_y.resize(n);
  out.d_g_d_n.resize(n);
  out.d_g_d_zeta.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.d_g_d_x[i] = fd_jacobian(corr, source, InputKind::x, i, cfg);
    out.d_g_d_y[i] = fd_jacobian(corr, source, InputKind::y, i, cfg);
    out.d_g_d_n[i] = fd_jacobian(corr, source, InputKind::n, i, cfg);
    out.d_g_d_zeta[i] = fd_jacobian(corr, source, InputKind::zeta, i, cfg);
  }
  return out;
}

struct KindError {
  double mse = 0.0;
  double rel_mse = 0.0;
};

/// Errors of chained per-point loss gradients. Per kind, rel_mse is the mse
/// divided by the mean square of the oracle's chained gradient; the aggregate
/// rel_mse is the mean of the four per-kind values.
struct GradErrorReport {
  std::array<KindError, 4> per_kind{};
  double mse = 0.0;
  double rel_mse = 0.0;
  int n_iters = 0;

  const KindError& operator[](InputKind k) const { return per_kind[static_cast<int>(k)]; }
};

namespace detail {
inline KindError kind_error(const std::vector<double>& a, const std::vector<double>& f) {
  CompensatedSum err, ref;
  for (std::size_t i = 0; i < a.size(); ++i) {
    err.add((a[i] - f[i]) * (a[i] - f[i]));
    ref.add(f[i] * f[i]);
  }
  KindError e;
  const double count = static_cast<double>(std::max<std::size_t>(a.size(), 1));
  e.mse = err.value() / count;
  const double ms = ref.value() / count;
  e.rel_mse = ms > 0.0 ? e.mse / ms : (e.mse > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  return e;
}

template <class Bundle>
std::array<std::vector<double>, 4> chained(const Bundle& b, const Vec12& u) {
  std::array<std::vector<double>, 4> out;
  for (std::size_t i = 0; i < b.d_g_d_y.size(); ++i) {
    const Vec3 dx = b.d_g_d_x[i].transpose() * u;
    const Vec3 dy = b.d_g_d_y[i].transpose() * u;
    const Vec3 dn = b.d_g_d_n[i].transpose() * u;
    for (int k = 0; k < 3; ++k) {
      out[0].push_back(dx(k));
      out[1].push_back(dy(k));
      out[2].push_back(dn(k));
    }
    out[3].push_back(b.d_g_d_zeta[i].dot(u));
  }
  return out;
}
}  // namespace detail

template <class AnalyticBundle, class OracleBundle>
GradErrorReport compare(const AnalyticBundle& analytic, const OracleBundle& fd, const Vec12& loss_direction,
                        int n_iters = 0) {
  if (analytic.d_g_d_y.size() != fd.d_g_d_y.size()) throw std::invalid_argument("compare: bundle sizes differ");
  const auto a = detail::chained(analytic, loss_direction);
  const auto f = detail::chained(fd, loss_direction);
  GradErrorReport rep;
  rep.n_iters = n_iters;
  CompensatedSum mse_total;
  std::size_t count = 0;
  for (int k = 0; k < 4; ++k) {
    rep.per_kind[k] = detail::kind_error(a[k], f[k]);
    mse_total.add(rep.per_kind[k].mse * static_cast<double>(a[k].size()));
    count += a[k].size();
    rep.rel_mse += rep.per_kind[k].rel_mse / 4.0;
  }
  rep.mse = count ? mse_total.value() / static_cast<double>(count) : 0.0;
  return rep;
}

// --------------------------------------------------------- seeded instances

/// A noisy correspondence problem with known ground truth.
struct GradcheckInstance {
  std::vector<Vec3> source;
  CorrespondenceSet corr;
  RigidTransform gt;
};

/// n_pairs samples of `kind` (default cube); targets are gt(x) and gt-rotated normals, both
/// perturbed by noise (normals re-normalized), weights uniform in [0.5, 1.5].
inline GradcheckInstance make_gradcheck_instance(std::uint64_t seed, std::size_t n_pairs, double noise = 0.02,
                                                 double rot_max_deg = 45.0, double trans_max = 0.5,
                                                 ShapeKind kind = ShapeKind::cube) {
  const Rng root(seed);
  const PointCloud shape = synth_shape(kind, std::max<std::size_t>(n_pairs, 8), root.split(0).next_u64());
  Rng rng = root.split(1);
  GradcheckInstance inst;
  inst.gt = random_transform(rng, rot_max_deg, trans_max);
  inst.source.assign(shape.positions.begin(), shape.positions.begin() + static_cast<std::ptrdiff_t>(n_pairs));
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const Vec3 y = inst.gt.apply(shape.positions[i]) + noise * Vec3(rng.normal(), rng.normal(), rng.normal());
    const Vec3 n = (inst.gt.rotation * shape.normals[i] + noise * Vec3(rng.normal(), rng.normal(), rng.normal()))
                       .normalized();
    inst.corr.points.push_back(y);
    inst.corr.normals.push_back(n);
    inst.corr.weights.push_back(rng.uniform(0.5, 1.5));
  }
  return inst;
}

/// Analytic-vs-FD comparison for one instance, chained through the rigid
/// motion loss at the solved transform.
inline GradErrorReport run_gradcheck_case(const GradcheckInstance& inst, const FDConfig& cfg,
                                          const BackwardOptions& bopt = {}) {
  const GVector g = solve_g(inst.corr, inst.source, cfg);
  const auto loss = rigid_motion_loss(g, inst.gt);
  const auto analytic = backward(inst.corr, inst.source, g, bopt);
  const auto fd = fd_bundle(inst.corr, inst.source, cfg);
  return compare(analytic, fd, loss.d_loss_d_g, cfg.n_iters_forward);
}

/// CSV schema: instance_id,input_kind,mse,rel_mse,n_iters (kind "all" is the aggregate).
inline void write_gradcheck_header(std::ostream& out) { out << "instance_id,input_kind,mse,rel_mse,n_iters\n"; }

inline void write_gradcheck_rows(std::ostream& out, std::size_t instance_id, const GradErrorReport& rep) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  for (auto k : kAllInputKinds)
    out << instance_id << ',' << to_string(k) << ',' << num(rep[k].mse) << ',' << num(rep[k].rel_mse) << ','
        << rep.n_iters << '\n';
  out << instance_id << ",all," << num(rep.mse) << ',' << num(rep.rel_mse) << ',' << rep.n_iters << '\n';
}

}  // namespace p2pl

#endif  // P2PL_GRADCHECK_HPP
