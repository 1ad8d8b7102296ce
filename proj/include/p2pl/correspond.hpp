#ifndef P2PL_CORRESPOND_HPP
#define P2PL_CORRESPOND_HPP

#include <p2pl/error.hpp>
#include <p2pl/kdtree.hpp>
#include <p2pl/numeric.hpp>
#include <p2pl/point_cloud.hpp>
#include <p2pl/rng.hpp>
#include <p2pl/sym3_eigen.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2pl {

/// Per-source-point pointed target position y_i, unit normal n_i and
/// reliability weight zeta_i.
struct CorrespondenceSet {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;
  std::vector<double> weights;

  std::size_t size() const { return points.size(); }

  /// Unit weights for every pair.
  static CorrespondenceSet unweighted(std::vector<Vec3> points, std::vector<Vec3> normals) {
    CorrespondenceSet c;
    c.weights.assign(points.size(), 1.0);
    c.points = std::move(points);
    c.normals = std::move(normals);
    return c;
  }

  void validate(double unit_tol = 1e-9) const {
    if (normals.size() != points.size() || weights.size() != points.size())
      throw std::invalid_argument("correspondence arrays differ in length");
    bool any_positive = false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (std::abs(normals[i].norm() - 1.0) > unit_tol) throw std::invalid_argument("correspondence normal not unit");
      if (!(weights[i] >= 0.0)) throw std::invalid_argument("negative reliability weight");
      any_positive = any_positive || weights[i] > 0.0;
    }
    if (!any_positive) throw std::invalid_argument("all reliability weights are zero");
  }
};

/// Dense row-major N x M score matrix (pre-softmax assignment scores).
class ScoreMatrix {
 public:
  ScoreMatrix() = default;
  ScoreMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static ScoreMatrix from_rows(const std::vector<std::vector<double>>& rows) {
    ScoreMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != m.cols_) throw std::invalid_argument("ragged score rows");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Numerically stable softmax of one score row.
inline std::vector<double> softmax(std::span<const double> u) {
  std::vector<double> c(u.size());
  if (u.empty()) return c;
  const double mx = *std::max_element(u.begin(), u.end());
  CompensatedSum total;
  for (std::size_t j = 0; j < u.size(); ++j) {
    c[j] = std::exp(u[j] - mx);
    total.add(c[j]);
  }
  const double z = total.value();
  for (auto& v : c) v /= z;
  return c;
}

inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < v.size(); ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

// ------------------------------------------------------- nearest neighbors

/// Hard nearest-neighbor correspondences against a prebuilt tree over
/// target.positions; unit weights.
inline CorrespondenceSet nn_correspond(std::span<const Vec3> source, const PointCloud& target, const KdTree& tree) {
  if (!target.has_normals()) throw MissingNormals("nn_correspond: target has no normals");
  CorrespondenceSet c;
  c.points.reserve(source.size());
  c.normals.reserve(source.size());
  for (const auto& p : source) {
    const auto nb = tree.nearest(p);
    c.points.push_back(target.positions[nb.index]);
    c.normals.push_back(target.normals[nb.index]);
  }
  c.weights.assign(source.size(), 1.0);
  return c;
}

inline CorrespondenceSet nn_correspond(const PointCloud& source, const PointCloud& target) {
  if (source.empty() || target.empty()) throw std::invalid_argument("nn_correspond: empty cloud");
  const KdTree tree(target.positions);
  return nn_correspond(source.positions, target, tree);
}

// ------------------------------------------------------------ soft pointers

struct SoftPointers {
  CorrespondenceSet corr;
  /// Rows whose averaged normal tensor has a repeated top eigenvalue.
  std::vector<std::size_t> degenerate;
};

/// Soft pointers: y_i = sum_j c_ij y_j with c_i = softmax(u_i); the normal is
/// the top eigenvector of the averaged normal tensor sum_j c_ij n_j n_j^T,
/// which is unaffected by the sign of any n_j.
inline SoftPointers soft_pointers(const ScoreMatrix& scores, const PointCloud& target) {
  if (scores.cols() != target.size()) throw std::invalid_argument("soft_pointers: score columns != target size");
  if (!target.has_normals()) throw MissingNormals("soft_pointers: target has no normals");
  SoftPointers out;
  out.corr.points.resize(scores.rows());
  out.corr.normals.resize(scores.rows());
  out.corr.weights.assign(scores.rows(), 1.0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto c = softmax(scores.row(i));
    CompensatedMatrixSum<Vec3> y;
    CompensatedMatrixSum<Mat3> tensor;
    for (std::size_t j = 0; j < c.size(); ++j) {
      y.add(c[j] * target.positions[j]);
      tensor.add(c[j] * (target.normals[j] * target.normals[j].transpose()));
    }
    const auto eig = sym3_eigen(tensor.value());
    if (eig.values(0) - eig.values(1) < 1e-9) out.degenerate.push_back(i);
    out.corr.points[i] = y.value();
    out.corr.normals[i] = eig.vectors.col(0);
  }
  return out;
}

/// Naive baseline: softmax-weighted average of the normal vectors themselves,
/// left unnormalized (its length collapses when signs disagree).
inline std::vector<Vec3> average_normal_vectors(const ScoreMatrix& scores, const PointCloud& target) {
  std::vector<Vec3> out(scores.rows(), Vec3::Zero());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto c = softmax(scores.row(i));
    for (std::size_t j = 0; j < c.size(); ++j) out[i] += c[j] * target.normals[j];
  }
  return out;
}

/// u_ij = -beta |R x_i + t - y_j|^2 + alpha (pre-exponentiation match scores).
inline ScoreMatrix match_matrix(const PointCloud& source, const PointCloud& target, const RigidTransform& t,
                                double alpha, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("match_matrix: beta must be positive");
  ScoreMatrix u(source.size(), target.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Vec3 p = t.apply(source.positions[i]);
    for (std::size_t j = 0; j < target.size(); ++j) u(i, j) = -beta * (p - target.positions[j]).squaredNorm() + alpha;
  }
  return u;
}

// ------------------------------------------------------------ Gumbel-max

struct GumbelOptions {
  double tau = 1.0;
  std::uint64_t seed = 0;
  /// Test hook: q = 0, so the selection is the plain row argmax.
  bool disable_noise = false;
};

/// One selected column per row; row i's one-hot weight vector is e_{columns[i]}.
struct HardAssignment {
  std::vector<std::size_t> columns;

  ScoreMatrix one_hot(std::size_t cols) const {
    ScoreMatrix m(columns.size(), cols);
    for (std::size_t i = 0; i < columns.size(); ++i) m(i, columns[i]) = 1.0;
    return m;
  }
};

/// one-hot[argmax_j softmax((u_i + q_i) / tau)] with q_ij ~ Gumbel(0, 1) drawn
/// from a per-row stream split off `seed`. Softmax is monotone, so the argmax
/// is taken on (u + q) / tau directly; tau never changes the selection.
inline HardAssignment gumbel_hard_weights(const ScoreMatrix& scores, const GumbelOptions& opt) {
  if (!(opt.tau > 0.0)) throw std::invalid_argument("gumbel_hard_weights: tau must be positive");
  const Rng root(opt.seed);
  HardAssignment out;
  out.columns.resize(scores.rows());
  std::vector<double> perturbed(scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    Rng rng = root.split(i);
    const auto u = scores.row(i);
    for (std::size_t j = 0; j < u.size(); ++j) {
      const double q = opt.disable_noise ? 0.0 : rng.gumbel();
      perturbed[j] = (u[j] + q) / opt.tau;
    }
    out.columns[i] = argmax_lowest(perturbed);
  }
  return out;
}

/// Correspondences from a hard assignment (one-hot soft pointers).
inline CorrespondenceSet hard_pointers(const HardAssignment& a, const PointCloud& target) {
  if (!target.has_normals()) throw MissingNormals("hard_pointers: target has no normals");
  CorrespondenceSet c;
  for (auto j : a.columns) {
    c.points.push_back(target.positions.at(j));
    c.normals.push_back(target.normals.at(j));
  }
  c.weights.assign(a.columns.size(), 1.0);
  return c;
}

// ------------------------------------------------------ reliability weights

struct ReliabilityWeights {
  std::vector<double> zeta;
  /// Rows whose weight underflowed to zero.
  std::vector<std::size_t> zero_rows;
};

/// zeta_i = sum_j exp(u_ij), scores clamped at 80 before exponentiation.
inline ReliabilityWeights reliability_weights(const ScoreMatrix& scores) {
  ReliabilityWeights out;
  out.zeta.resize(scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    CompensatedSum s;
    for (double u : scores.row(i)) s.add(std::exp(std::min(u, 80.0)));
    out.zeta[i] = s.value();
    if (out.zeta[i] == 0.0) out.zero_rows.push_back(i);
  }
  return out;
}

// ------------------------------------------------------------- keypoints

enum class KeypointOrder { ascending, descending };

/// Indices of the k smallest (ascending) or largest (descending) saliency
/// values; ties keep index order.
inline std::vector<std::size_t> topk_keypoints(std::span<const double> feature_norms, std::size_t k,
                                               KeypointOrder order = KeypointOrder::ascending) {
  if (k > feature_norms.size()) throw std::invalid_argument("topk_keypoints: k exceeds point count");
  std::vector<std::size_t> idx(feature_norms.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (order == KeypointOrder::ascending)
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return feature_norms[a] < feature_norms[b]; });
  else
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return feature_norms[a] > feature_norms[b]; });
  idx.resize(k);
  return idx;
}

inline std::vector<std::size_t> topk_keypoints(const PointCloud& cloud, std::span<const double> feature_norms,
                                               std::size_t k, KeypointOrder order = KeypointOrder::ascending) {
  if (feature_norms.size() != cloud.size()) throw std::invalid_argument("topk_keypoints: one norm per point");
  return topk_keypoints(feature_norms, k, order);
}

}  // namespace p2pl

#endif  // P2PL_CORRESPOND_HPP
