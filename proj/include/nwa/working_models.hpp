#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "nwa/design.hpp"
#include "nwa/linalg.hpp"

namespace nwa {

// Selects the auxiliary columns a model uses and optionally prepends an
// intercept. An empty column list means "all columns". The intercept is only
// meaningful for GREG; distance- and kernel-based models ignore it.
struct FeatureMap {
  std::vector<Index> columns;
  bool intercept = false;

  Index dim(Index n_aux) const;
  Matrix apply(const Matrix& aux) const;
  RowVector apply_row(const Eigen::Ref<const RowVector>& aux_row) const;
  // Totals of the mapped features from column totals; the intercept total is N.
  Vector apply_totals(const Vector& aux_totals, Index n_units) const;
  // Without the intercept column.
  FeatureMap without_intercept() const { return FeatureMap{columns, false}; }
};

// ---------------------------------------------------------------------------
// Generalized regression
// ---------------------------------------------------------------------------

// c_k in the respondent normal equations sum x x'/c B = sum x y/c.
enum class GregWeighting { kUnit, kSigma2, kPiPhat, kPiPhatSigma2 };

struct GregOptions {
  GregWeighting weighting = GregWeighting::kUnit;
  std::optional<Vector> sigma2_over_sr;  // defaults to 1 when a sigma2 weighting is requested
  FeatureMap features;
};

struct GregFit {
  Vector coeff;  // B_r
  GregWeighting weighting = GregWeighting::kUnit;
  std::optional<Vector> sigma2;
  FeatureMap features;
  Vector c_over_sr;       // c_k
  Matrix covariates_sr;   // mapped respondent covariates
  Matrix normal_matrix;   // sum_{s_r} x x' / c
  bool ridge_applied = false;

  double predict(const Eigen::Ref<const RowVector>& aux_row) const;
};

// `p_hat_over_sr` is required for the pi*p_hat weightings. Throws
// SingularSystemError when the normal equations stay singular after the ridge.
GregFit fit_greg(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr,
                 const GregOptions& options = {}, const Vector* p_hat_over_sr = nullptr);

// Finite-population coefficient B_U (sigma2 weighting when supplied). Used as a
// test and diagnostics oracle only.
Vector greg_population_coefficients(const Matrix& aux_U, const Vector& y_U, const FeatureMap& features,
                                    const std::optional<Vector>& sigma2_U = std::nullopt);

// ---------------------------------------------------------------------------
// K nearest neighbours
// ---------------------------------------------------------------------------

struct KnnFit {
  Index k_neighbors = 5;
  FeatureMap features;
  Matrix coords;                 // mapped respondent covariates
  Vector y;                      // respondent outcomes
  std::vector<Index> units;      // respondent unit indices, ascending
};

// Throws DomainError when n_r < K or K < 1.
KnnFit fit_knn(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr, Index k_neighbors,
               const FeatureMap& features = {});

// Positions (into the respondent arrays) of the K nearest respondents of the
// query, Euclidean distance, ties broken by lowest unit index. A respondent
// querying its own coordinates is its own neighbour.
std::vector<Index> knn_neighbors(const KnnFit& fit, const Eigen::Ref<const RowVector>& aux_row);

double predict_knn(const KnnFit& fit, const Eigen::Ref<const RowVector>& aux_row);

// Weighted-form weights over s_r:
//   w_l = 1/(pi_l p_l) + (1/K) (sum_U alpha_kl - sum_{s_r} alpha_kl / (pi_k p_k)).
Vector knn_weighted_form_weights(const KnnFit& fit, const Matrix& aux_U, const SampleState& state,
                                 const Vector& p_hat_over_sr);

// ---------------------------------------------------------------------------
// Local polynomial regression
// ---------------------------------------------------------------------------

enum class Kernel { kGaussian, kEpanechnikov, kUniform };

// k_j in the kernel weights K((x_j - x)/h) / (k_j h).
enum class KernelWeightMode { kUnit, kPiTimesPhat };

struct LocalPolyOptions {
  int order = 1;
  Kernel kernel = Kernel::kGaussian;
  KernelWeightMode weight_mode = KernelWeightMode::kUnit;
  // Per-coordinate bandwidths; default 1.06 sd(x_j) n_r^(-1/5) over respondents.
  std::optional<Vector> bandwidth;
  FeatureMap features;
};

struct LocalPolyFit {
  int order = 1;
  Vector bandwidth;
  Kernel kernel = Kernel::kGaussian;
  KernelWeightMode weight_mode = KernelWeightMode::kUnit;
  FeatureMap features;
  Matrix coords;
  Vector y;
  Vector k_weights;  // k_j over s_r
};

// Multivariate covariates support order 0 or 1; scalar covariates any order.
LocalPolyFit fit_local_poly(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr,
                            const LocalPolyOptions& options = {}, const Vector* p_hat_over_sr = nullptr);

struct LocalPolyPrediction {
  double value = 0.0;
  Vector weights;         // omega over s_r: value == weights' y
  bool fallback = false;  // local system singular; local mean used instead
};

LocalPolyPrediction predict_local_poly(const LocalPolyFit& fit, const Eigen::Ref<const RowVector>& aux_row);

// ---------------------------------------------------------------------------
// Uniform interface
// ---------------------------------------------------------------------------

struct NoModel {};

using WorkingModelFit = std::variant<NoModel, GregFit, KnnFit, LocalPolyFit>;

enum class ModelKind { kNone, kGreg, kKnn, kLocalPoly };

const char* to_string(ModelKind kind);
ModelKind kind_of(const WorkingModelFit& fit);

struct WorkingModelSpec {
  ModelKind kind = ModelKind::kGreg;
  FeatureMap features;
  GregWeighting greg_weighting = GregWeighting::kUnit;
  Index k_neighbors = 5;
  int poly_order = 1;
  Kernel kernel = Kernel::kGaussian;
  KernelWeightMode kernel_weight_mode = KernelWeightMode::kUnit;
  std::optional<Vector> bandwidth;
};

WorkingModelFit fit_working_model(const WorkingModelSpec& spec, const SampleState& state,
                                  const Matrix& aux_over_sr, const Vector& y_over_sr,
                                  const Vector* p_hat_over_sr = nullptr);

// m_r(x) for one full auxiliary row, and for every row of `aux`.
double predict(const WorkingModelFit& fit, const Eigen::Ref<const RowVector>& aux_row);
Vector predict_all(const WorkingModelFit& fit, const Matrix& aux);

// Linear-smoother rows: row i holds the weights l_i over s_r with
// m_r(aux_i) = l_i' y_r. Every model here is linear in the respondent outcomes.
Matrix smoother_rows(const WorkingModelFit& fit, const Matrix& aux);

// Number of local-polynomial predictions that hit the singular fallback.
Index local_poly_fallbacks(const LocalPolyFit& fit, const Matrix& aux);

}  // namespace nwa
