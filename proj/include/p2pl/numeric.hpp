#ifndef P2PL_NUMERIC_HPP
#define P2PL_NUMERIC_HPP

#include <Eigen/Core>

#include <cmath>
#include <cstddef>

namespace p2pl {

/// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v))
      comp_ += (sum_ - t) + v;
    else
      comp_ += (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Element-wise compensated accumulation of fixed-size Eigen objects.
template <class Mat>
class CompensatedMatrixSum {
 public:
  CompensatedMatrixSum() {
    sum_.setZero();
    comp_.setZero();
  }
  void add(const Mat& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double v = m.data()[i];
      double& s = sum_.data()[i];
      const double t = s + v;
      if (std::abs(s) >= std::abs(v))
        comp_.data()[i] += (s - t) + v;
      else
        comp_.data()[i] += (v - t) + s;
      s = t;
    }
  }
  Mat value() const { return sum_ + comp_; }

 private:
  Mat sum_;
  Mat comp_;
};

}  // namespace p2pl

#endif  // P2PL_NUMERIC_HPP
