#include "nwa/linalg.hpp"

#include <cmath>
#include <string>

#include "nwa/errors.hpp"

namespace nwa {

namespace {

// Reciprocal condition threshold below which an LDLT factorization is treated
// as singular.
constexpr double kSingularRcond = 1e-13;

bool factor_ok(const Eigen::LDLT<Matrix>& ldlt) {
  if (ldlt.info() != Eigen::Success) return false;
  const double rc = ldlt.rcond();
  return std::isfinite(rc) && rc > kSingularRcond;
}

}  // namespace

double compensated_sum(const Eigen::Ref<const Vector>& values) {
  CompensatedSum acc;
  for (Index i = 0; i < values.size(); ++i) acc.add(values[i]);
  return acc.value();
}

Vector compensated_colwise_sum(const Eigen::Ref<const Matrix>& m) {
  Vector out(m.cols());
  for (Index j = 0; j < m.cols(); ++j) out[j] = compensated_sum(m.col(j));
  return out;
}

Matrix solve_spd_many(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b,
                      const char* what, bool* ridge_applied) {
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw DimensionError(std::string(what) + ": system dimensions do not agree");
  }
  if (ridge_applied) *ridge_applied = false;
  if (a.rows() == 0) return Matrix(0, b.cols());

  Eigen::LDLT<Matrix> ldlt(a);
  if (factor_ok(ldlt)) return ldlt.solve(b);

  const double dim = static_cast<double>(a.rows());
  const double ridge = 1e-8 * a.trace() / dim;
  if (std::isfinite(ridge) && ridge > 0.0) {
    Matrix shifted = a;
    shifted.diagonal().array() += ridge;
    ldlt.compute(shifted);
    if (factor_ok(ldlt)) {
      if (ridge_applied) *ridge_applied = true;
      return ldlt.solve(b);
    }
  }
  throw SingularSystemError(std::string(what) + ": matrix is singular even after ridge regularization");
}

SymmetricSolve solve_spd_with_ridge(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Vector>& b,
                                    const char* what) {
  SymmetricSolve out;
  Matrix rhs = b;
  out.solution = solve_spd_many(a, rhs, what, &out.ridge_applied).col(0);
  return out;
}

Matrix select_rows(const Eigen::Ref<const Matrix>& m, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

Vector select(const Eigen::Ref<const Vector>& v, std::span<const Index> rows) {
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Index>(i)] = v[rows[i]];
  return out;
}

}  // namespace nwa
