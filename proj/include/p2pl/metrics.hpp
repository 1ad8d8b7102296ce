#ifndef P2PL_METRICS_HPP
#define P2PL_METRICS_HPP

#include <p2pl/geom.hpp>
#include <p2pl/kdtree.hpp>
#include <p2pl/numeric.hpp>
#include <p2pl/point_cloud.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2pl {

/// Intrinsic Z-Y-X angles in degrees: R = Rz(yaw) Ry(pitch) Rx(roll).
struct EulerZYX {
  double yaw = 0.0;
  double pitch = 0.0;
  double roll = 0.0;
  bool gimbal_lock = false;
};

inline EulerZYX euler_zyx(const Mat3& r) {
  EulerZYX e;
  // atan2 form keeps full precision near +/-90 deg, where asin loses ~1e-6 deg.
  e.pitch = rad2deg(std::atan2(-r(2, 0), std::hypot(r(0, 0), r(1, 0))));
  e.gimbal_lock = std::abs(std::abs(e.pitch) - 90.0) <= 1e-6;
  if (e.gimbal_lock) {
    // Only yaw -/+ roll is observable; put it all in yaw.
    e.roll = 0.0;
    e.yaw = rad2deg(std::atan2(-r(0, 1), r(1, 1)));
  } else {
    e.yaw = rad2deg(std::atan2(r(1, 0), r(0, 0)));
    e.roll = rad2deg(std::atan2(r(2, 1), r(2, 2)));
  }
  return e;
}

/// Wrap an angle difference in degrees into (-180, 180].
inline double wrap_deg(double d) {
  d = std::fmod(d, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

struct RotationErrors {
  Vec3 euler_residual_deg = Vec3::Zero();  // (yaw, pitch, roll), est - gt
  Vec3 euler_gt_deg = Vec3::Zero();
  double geodesic_deg = 0.0;
  bool gimbal_lock = false;
};

inline RotationErrors rotation_errors(const RigidTransform& est, const RigidTransform& gt) {
  const EulerZYX a = euler_zyx(est.rotation);
  const EulerZYX b = euler_zyx(gt.rotation);
  RotationErrors out;
  out.euler_residual_deg = Vec3(wrap_deg(a.yaw - b.yaw), wrap_deg(a.pitch - b.pitch), wrap_deg(a.roll - b.roll));
  out.euler_gt_deg = Vec3(b.yaw, b.pitch, b.roll);
  out.geodesic_deg = rad2deg(geodesic_angle(est.rotation, gt.rotation));
  out.gimbal_lock = a.gimbal_lock || b.gimbal_lock;
  return out;
}

/// MSE/RMSE/MAE/R^2 of one quantity (3 components per case).
struct QuantityStats {
  double mse = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> r2;  // empty when the targets are constant
};

/// residual = gt - predicted. R^2 is pooled across components with
/// SS_tot taken about each component's ground-truth mean.
inline QuantityStats batch_stats(std::span<const Vec3> gt_values, std::span<const Vec3> residuals) {
  if (gt_values.size() != residuals.size()) throw std::invalid_argument("batch_stats: size mismatch");
  if (residuals.size() < 2) throw std::invalid_argument("batch_stats: need at least 2 cases");
  const double n = static_cast<double>(residuals.size());
  CompensatedSum sq, ab, ss_tot;
  Vec3 mean = Vec3::Zero();
  for (const auto& g : gt_values) mean += g;
  mean /= n;
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    for (int k = 0; k < 3; ++k) {
      const double r = residuals[i](k);
      sq.add(r * r);
      ab.add(std::abs(r));
      const double d = gt_values[i](k) - mean(k);
      ss_tot.add(d * d);
    }
  }
  QuantityStats s;
  s.mse = sq.value() / (3.0 * n);
  s.rmse = std::sqrt(s.mse);
  s.mae = ab.value() / (3.0 * n);
  if (ss_tot.value() >= 1e-18) s.r2 = 1.0 - sq.value() / ss_tot.value();
  return s;
}

/// Symmetric mean of squared nearest-neighbor distances.
inline double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: empty cloud");
  auto one_way = [](std::span<const Vec3> from, std::span<const Vec3> to) {
    const KdTree tree(to);
    CompensatedSum s;
    for (const auto& p : from) s.add(tree.nearest(p).sq_dist);
    return s.value() / static_cast<double>(from.size());
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

/// Uses the clean clouds when present.
inline double chamfer(const RigidTransform& est, const RegistrationPair& pair) {
  const PointCloud& s = pair.clean_source ? *pair.clean_source : pair.source;
  const PointCloud& t = pair.clean_target ? *pair.clean_target : pair.target;
  const std::vector<Vec3> moved = p2pl::apply(est, std::span<const Vec3>(s.positions));
  return chamfer(moved, t.positions);
}

/// One CSV row. Failed cases carry a status code and NaN metrics.
struct MetricRow {
  std::string case_id;
  Vec3 euler_residual_deg = Vec3::Constant(std::nan(""));
  double geodesic_deg = std::nan("");
  Vec3 translation_residual = Vec3::Constant(std::nan(""));
  double chamfer = std::nan("");
  double fwd_ms = std::nan("");
  double bwd_ms = std::nan("");
  std::string status = "ok";
  Vec3 euler_gt_deg = Vec3::Zero();
  Vec3 translation_gt = Vec3::Zero();
};

struct MetricReport {
  QuantityStats rotation;
  QuantityStats translation;
  double chamfer = 0.0;  // mean over ok rows
  std::size_t ok_rows = 0;
  std::vector<MetricRow> rows;
};

inline MetricReport summarize(std::vector<MetricRow> rows) {
  MetricReport rep;
  std::vector<Vec3> rg, rr, tg, tr;
  CompensatedSum ch;
  for (const auto& r : rows) {
    if (r.status != "ok") continue;
    rg.push_back(r.euler_gt_deg);
    rr.push_back(-r.euler_residual_deg);
    tg.push_back(r.translation_gt);
    tr.push_back(-r.translation_residual);
    ch.add(r.chamfer);
  }
  rep.ok_rows = rg.size();
  if (rep.ok_rows >= 2) {
    rep.rotation = batch_stats(rg, rr);
    rep.translation = batch_stats(tg, tr);
  }
  if (rep.ok_rows > 0) rep.chamfer = ch.value() / static_cast<double>(rep.ok_rows);
  rep.rows = std::move(rows);
  return rep;
}

inline void write_metric_header(std::ostream& out) {
  out << "case_id,rz,ry,rx,geodesic_deg,tx,ty,tz,chamfer,fwd_ms,bwd_ms,status\n";
}

inline void write_metric_row(std::ostream& out, const MetricRow& r) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::string(buf);
  };
  out << r.case_id;
  for (int k = 0; k < 3; ++k) out << ',' << num(r.euler_residual_deg(k));
  out << ',' << num(r.geodesic_deg);
  for (int k = 0; k < 3; ++k) out << ',' << num(r.translation_residual(k));
  out << ',' << num(r.chamfer) << ',' << num(r.fwd_ms) << ',' << num(r.bwd_ms) << ',' << r.status << '\n';
}

inline void write_summary(std::ostream& out, const MetricReport& rep) {
  auto opt = [](const std::optional<double>& v) {
    char buf[40];
    if (!v) return std::string("NA");
    std::snprintf(buf, sizeof(buf), "%.9g", *v);
    return std::string(buf);
  };
  char buf[256];
  out << "quantity,mse,rmse,mae,r2\n";
  std::snprintf(buf, sizeof(buf), "rotation_deg,%.9g,%.9g,%.9g,", rep.rotation.mse, rep.rotation.rmse,
                rep.rotation.mae);
  out << buf << opt(rep.rotation.r2) << '\n';
  std::snprintf(buf, sizeof(buf), "translation,%.9g,%.9g,%.9g,", rep.translation.mse, rep.translation.rmse,
                rep.translation.mae);
  out << buf << opt(rep.translation.r2) << '\n';
  std::snprintf(buf, sizeof(buf), "chamfer,%.9g,,,\n", rep.chamfer);
  out << buf;
}

}  // namespace p2pl

#endif  // P2PL_METRICS_HPP
