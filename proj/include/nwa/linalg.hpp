#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace nwa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Neumaier-compensated accumulator. Population-level sums of predictions are
// large relative to the residual corrections added to them.
class CompensatedSum {
 public:
  void add(double value) noexcept {
    const double t = sum_ + value;
    if (std::abs(sum_) >= std::abs(value)) {
      correction_ += (sum_ - t) + value;
    } else {
      correction_ += (value - t) + sum_;
    }
    sum_ = t;
  }
  CompensatedSum& operator+=(double value) noexcept {
    add(value);
    return *this;
  }
  double value() const noexcept { return sum_ + correction_; }

 private:
  double sum_ = 0.0;
  double correction_ = 0.0;
};

double compensated_sum(const Eigen::Ref<const Vector>& values);

// Column sums of `m` with compensated accumulation.
Vector compensated_colwise_sum(const Eigen::Ref<const Matrix>& m);

struct SymmetricSolve {
  Vector solution;
  bool ridge_applied = false;
};

// Solves the symmetric positive semi-definite system A x = b. When A is
// numerically singular a ridge of 1e-8 * trace(A) / dim is added once; if that
// still fails SingularSystemError is thrown.
SymmetricSolve solve_spd_with_ridge(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& b,
                                    const char* what);

// Same policy for several right-hand sides.
Matrix solve_spd_many(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                      const char* what, bool* ridge_applied = nullptr);

// Rows of `m` selected by `rows` (in the given order).
Matrix select_rows(const Eigen::Ref<const Matrix>& m, std::span<const Index> rows);
Vector select(const Eigen::Ref<const Vector>& v, std::span<const Index> rows);

}  // namespace nwa
