#include "nwa/working_models.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "nwa/errors.hpp"

namespace nwa {

// ---------------------------------------------------------------------------
// FeatureMap
// ---------------------------------------------------------------------------

Index FeatureMap::dim(Index n_aux) const {
  const Index base = columns.empty() ? n_aux : static_cast<Index>(columns.size());
  return base + (intercept ? 1 : 0);
}

Matrix FeatureMap::apply(const Matrix& aux) const {
  for (Index c : columns) {
    if (c < 0 || c >= aux.cols()) throw DimensionError("feature column " + std::to_string(c) + " out of range");
  }
  const Index d = dim(aux.cols());
  Matrix out(aux.rows(), d);
  Index j = 0;
  if (intercept) out.col(j++).setOnes();
  if (columns.empty()) {
    out.rightCols(aux.cols()) = aux;
  } else {
    for (Index c : columns) out.col(j++) = aux.col(c);
  }
  return out;
}

RowVector FeatureMap::apply_row(const Eigen::Ref<const RowVector>& aux_row) const {
  const Index d = dim(aux_row.size());
  RowVector out(d);
  Index j = 0;
  if (intercept) out[j++] = 1.0;
  if (columns.empty()) {
    out.tail(aux_row.size()) = aux_row;
  } else {
    for (Index c : columns) {
      if (c < 0 || c >= aux_row.size()) throw DimensionError("feature column out of range");
      out[j++] = aux_row[c];
    }
  }
  return out;
}

Vector FeatureMap::apply_totals(const Vector& aux_totals, Index n_units) const {
  Vector out = apply_row(aux_totals.transpose()).transpose();
  if (intercept) out[0] = static_cast<double>(n_units);
  return out;
}

namespace {

void check_respondent_inputs(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr,
                             const char* what) {
  if (aux_over_sr.rows() != state.n_r() || y_over_sr.size() != state.n_r()) {
    throw DimensionError(std::string(what) + ": inputs must have one row per respondent");
  }
  if (state.n_r() == 0) throw DomainError(std::string(what) + ": no respondents");
}

Vector pi_phat(const SampleState& state, const Vector* p_hat_over_sr, const char* what) {
  if (p_hat_over_sr == nullptr) {
    throw ConfigurationError(std::string(what) + ": weighting needs estimated response probabilities");
  }
  if (p_hat_over_sr->size() != state.n_r()) throw DimensionError(std::string(what) + ": p_hat length mismatch");
  return state.pi_over_respondents().cwiseProduct(*p_hat_over_sr);
}

}  // namespace

// ---------------------------------------------------------------------------
// GREG
// ---------------------------------------------------------------------------

double GregFit::predict(const Eigen::Ref<const RowVector>& aux_row) const {
  return features.apply_row(aux_row).dot(coeff);
}

GregFit fit_greg(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr,
                 const GregOptions& options, const Vector* p_hat_over_sr) {
  check_respondent_inputs(state, aux_over_sr, y_over_sr, "GREG");
  const Index n_r = state.n_r();

  Vector sigma2 = Vector::Ones(n_r);
  if (options.sigma2_over_sr) {
    if (options.sigma2_over_sr->size() != n_r) throw DimensionError("GREG: sigma2 length mismatch");
    sigma2 = *options.sigma2_over_sr;
    if ((sigma2.array() <= 0.0).any()) throw DomainError("GREG: sigma2 must be positive");
  }

  Vector c(n_r);
  switch (options.weighting) {
    case GregWeighting::kUnit:
      c.setOnes();
      break;
    case GregWeighting::kSigma2:
      c = sigma2;
      break;
    case GregWeighting::kPiPhat:
      c = pi_phat(state, p_hat_over_sr, "GREG");
      break;
    case GregWeighting::kPiPhatSigma2:
      c = pi_phat(state, p_hat_over_sr, "GREG").cwiseProduct(sigma2);
      break;
  }

  GregFit fit;
  fit.weighting = options.weighting;
  fit.sigma2 = options.sigma2_over_sr;
  fit.features = options.features;
  fit.c_over_sr = c;
  fit.covariates_sr = options.features.apply(aux_over_sr);
  const Vector inv_c = c.cwiseInverse();
  fit.normal_matrix = fit.covariates_sr.transpose() * inv_c.asDiagonal() * fit.covariates_sr;
  const Vector rhs = fit.covariates_sr.transpose() * inv_c.cwiseProduct(y_over_sr);
  SymmetricSolve solved = solve_spd_with_ridge(fit.normal_matrix, rhs, "GREG normal equations");
  fit.coeff = std::move(solved.solution);
  fit.ridge_applied = solved.ridge_applied;
  return fit;
}

Vector greg_population_coefficients(const Matrix& aux_U, const Vector& y_U, const FeatureMap& features,
                                    const std::optional<Vector>& sigma2_U) {
  if (aux_U.rows() != y_U.size()) throw DimensionError("B_U: aux and y disagree in length");
  const Matrix x = features.apply(aux_U);
  Vector inv_s = Vector::Ones(y_U.size());
  if (sigma2_U) inv_s = sigma2_U->cwiseInverse();
  const Matrix a = x.transpose() * inv_s.asDiagonal() * x;
  const Vector b = x.transpose() * inv_s.cwiseProduct(y_U);
  return solve_spd_with_ridge(a, b, "population regression").solution;
}

// ---------------------------------------------------------------------------
// K-NN
// ---------------------------------------------------------------------------

KnnFit fit_knn(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr, Index k_neighbors,
               const FeatureMap& features) {
  check_respondent_inputs(state, aux_over_sr, y_over_sr, "K-NN");
  if (k_neighbors < 1) throw DomainError("K-NN: K must be at least 1");
  if (state.n_r() < k_neighbors) {
    throw DomainError("K-NN: " + std::to_string(state.n_r()) + " respondents but K = " +
                      std::to_string(k_neighbors));
  }
  KnnFit fit;
  fit.k_neighbors = k_neighbors;
  fit.features = features.without_intercept();
  fit.coords = fit.features.apply(aux_over_sr);
  fit.y = y_over_sr;
  fit.units = state.respondents;
  return fit;
}

std::vector<Index> knn_neighbors(const KnnFit& fit, const Eigen::Ref<const RowVector>& aux_row) {
  const RowVector q = fit.features.apply_row(aux_row);
  const Index n_r = fit.coords.rows();
  if (n_r < fit.k_neighbors) throw DomainError("K-NN: fewer respondents than K");

  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n_r));
  for (Index j = 0; j < n_r; ++j) dist[static_cast<std::size_t>(j)] = {(fit.coords.row(j) - q).squaredNorm(), j};
  // Respondents are stored in ascending unit order, so position order is
  // unit order and breaks ties at equal distance.
  const auto k = static_cast<std::ptrdiff_t>(fit.k_neighbors);
  std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::ptrdiff_t i = 0; i < k; ++i) out.push_back(dist[static_cast<std::size_t>(i)].second);
  return out;
}

double predict_knn(const KnnFit& fit, const Eigen::Ref<const RowVector>& aux_row) {
  double sum = 0.0;
  for (Index j : knn_neighbors(fit, aux_row)) sum += fit.y[j];
  return sum / static_cast<double>(fit.k_neighbors);
}

Vector knn_weighted_form_weights(const KnnFit& fit, const Matrix& aux_U, const SampleState& state,
                                 const Vector& p_hat_over_sr) {
  const Index n_r = state.n_r();
  if (p_hat_over_sr.size() != n_r || fit.coords.rows() != n_r) {
    throw DimensionError("K-NN weights: respondent dimensions disagree");
  }
  const Vector pi = state.pi_over_respondents();
  const double inv_k = 1.0 / static_cast<double>(fit.k_neighbors);

  // sum_U alpha_kl and sum_{s_r} alpha_kl / (pi_k p_k), accumulated per l.
  Vector over_population = Vector::Zero(n_r);
  Vector over_respondents = Vector::Zero(n_r);
  for (Index k = 0; k < aux_U.rows(); ++k) {
    for (Index l : knn_neighbors(fit, aux_U.row(k))) over_population[l] += 1.0;
  }
  for (Index i = 0; i < n_r; ++i) {
    const Index unit = state.respondents[static_cast<std::size_t>(i)];
    const double d = 1.0 / (pi[i] * p_hat_over_sr[i]);
    for (Index l : knn_neighbors(fit, aux_U.row(unit))) over_respondents[l] += d;
  }

  Vector w(n_r);
  for (Index l = 0; l < n_r; ++l) {
    w[l] = 1.0 / (pi[l] * p_hat_over_sr[l]) + inv_k * (over_population[l] - over_respondents[l]);
  }
  return w;
}

// ---------------------------------------------------------------------------
// Local polynomial
// ---------------------------------------------------------------------------

namespace {

// Kernel value up to a constant factor; constants cancel in the local fit.
double kernel_log_weight(Kernel kernel, double u, bool* zero) {
  switch (kernel) {
    case Kernel::kGaussian:
      return -0.5 * u * u;
    case Kernel::kEpanechnikov:
      if (std::abs(u) >= 1.0) {
        *zero = true;
        return 0.0;
      }
      return std::log1p(-u * u);
    case Kernel::kUniform:
      if (std::abs(u) > 1.0) *zero = true;
      return 0.0;
  }
  return 0.0;
}

Index local_terms(int order, Index dim) { return dim == 1 ? order + 1 : (order == 0 ? 1 : 1 + dim); }

// Local design row [1, (x_j - x0), ..., (x_j - x0)^q] (scalar) or
// [1, (x_j - x0)'] (multivariate, q = 1).
void local_design_row(const RowVector& xj, const RowVector& x0, int order, Eigen::Ref<RowVector> row) {
  row[0] = 1.0;
  if (order == 0) return;
  if (xj.size() == 1) {
    const double diff = xj[0] - x0[0];
    double power = 1.0;
    for (int p = 1; p <= order; ++p) {
      power *= diff;
      row[p] = power;
    }
  } else {
    row.tail(xj.size()) = xj - x0;
  }
}

LocalPolyPrediction local_mean_fallback(const LocalPolyFit& fit, const RowVector& q, const Vector& kernel_w) {
  LocalPolyPrediction out;
  out.fallback = true;
  const Index n_r = fit.coords.rows();
  out.weights = Vector::Zero(n_r);
  const double total = kernel_w.sum();
  if (total > 0.0 && std::isfinite(total)) {
    out.weights = kernel_w / total;
  } else {
    // No kernel mass at the query: average the nearest respondents.
    const Index k = std::min<Index>(n_r, 5);
    std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n_r));
    for (Index j = 0; j < n_r; ++j) dist[static_cast<std::size_t>(j)] = {(fit.coords.row(j) - q).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (Index i = 0; i < k; ++i) out.weights[dist[static_cast<std::size_t>(i)].second] = 1.0 / static_cast<double>(k);
  }
  out.value = out.weights.dot(fit.y);
  return out;
}

}  // namespace

LocalPolyFit fit_local_poly(const SampleState& state, const Matrix& aux_over_sr, const Vector& y_over_sr,
                            const LocalPolyOptions& options, const Vector* p_hat_over_sr) {
  check_respondent_inputs(state, aux_over_sr, y_over_sr, "local polynomial");
  if (options.order < 0) throw DomainError("local polynomial: order must be non-negative");

  LocalPolyFit fit;
  fit.order = options.order;
  fit.kernel = options.kernel;
  fit.weight_mode = options.weight_mode;
  fit.features = options.features.without_intercept();
  fit.coords = fit.features.apply(aux_over_sr);
  fit.y = y_over_sr;
  const Index dim = fit.coords.cols();
  const Index n_r = fit.coords.rows();
  if (dim == 0) throw DimensionError("local polynomial: no covariates selected");
  if (dim > 1 && options.order > 1) {
    throw DomainError("local polynomial: multivariate covariates support order 0 or 1 only");
  }

  if (options.bandwidth) {
    if (options.bandwidth->size() != dim) throw DimensionError("local polynomial: bandwidth length mismatch");
    if ((options.bandwidth->array() <= 0.0).any()) throw DomainError("local polynomial: bandwidth must be positive");
    fit.bandwidth = *options.bandwidth;
  } else {
    // Rule of thumb 1.06 sd n^(-1/5), per coordinate.
    fit.bandwidth.resize(dim);
    const double shrink = std::pow(static_cast<double>(n_r), -0.2);
    for (Index j = 0; j < dim; ++j) {
      const double mean = fit.coords.col(j).mean();
      const double ss = (fit.coords.col(j).array() - mean).square().sum();
      const double sd = n_r > 1 ? std::sqrt(ss / static_cast<double>(n_r - 1)) : 0.0;
      fit.bandwidth[j] = sd > 0.0 ? 1.06 * sd * shrink : 1.0;
    }
  }

  if (options.weight_mode == KernelWeightMode::kPiTimesPhat) {
    fit.k_weights = pi_phat(state, p_hat_over_sr, "local polynomial");
  } else {
    fit.k_weights = Vector::Ones(n_r);
  }
  return fit;
}

LocalPolyPrediction predict_local_poly(const LocalPolyFit& fit, const Eigen::Ref<const RowVector>& aux_row) {
  const RowVector q = fit.features.apply_row(aux_row);
  const Index n_r = fit.coords.rows();
  const Index dim = fit.coords.cols();
  const Index terms = local_terms(fit.order, dim);

  // Kernel weights, rescaled by their maximum to avoid underflow far from
  // the data. The common factor cancels in the local solution.
  Vector log_w(n_r);
  std::vector<bool> zero(static_cast<std::size_t>(n_r), false);
  double max_log = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < n_r; ++j) {
    double lw = 0.0;
    bool is_zero = false;
    for (Index c = 0; c < dim; ++c) {
      lw += kernel_log_weight(fit.kernel, (fit.coords(j, c) - q[c]) / fit.bandwidth[c], &is_zero);
    }
    lw -= std::log(fit.k_weights[j]);
    zero[static_cast<std::size_t>(j)] = is_zero;
    log_w[j] = lw;
    if (!is_zero) max_log = std::max(max_log, lw);
  }
  Vector w = Vector::Zero(n_r);
  if (std::isfinite(max_log)) {
    for (Index j = 0; j < n_r; ++j) {
      if (!zero[static_cast<std::size_t>(j)]) w[j] = std::exp(log_w[j] - max_log);
    }
  }

  Matrix x_local(n_r, terms);
  for (Index j = 0; j < n_r; ++j) {
    RowVector row(terms);
    local_design_row(fit.coords.row(j), q, fit.order, row);
    x_local.row(j) = row;
  }

  const Matrix weighted = w.asDiagonal() * x_local;  // W X
  const Matrix a = x_local.transpose() * weighted;   // X' W X

  if (w.sum() > 0.0) {
    try {
      // Prediction from the local least-squares solution for y, and the
      // smoother weights omega = W X (X'WX)^-1 e_1 from a separate solve.
      const Vector beta = solve_spd_with_ridge(a, Vector(weighted.transpose() * fit.y), "local polynomial").solution;
      Vector e1 = Vector::Zero(terms);
      e1[0] = 1.0;
      const Vector u = solve_spd_with_ridge(a, e1, "local polynomial").solution;
      LocalPolyPrediction out;
      out.value = beta[0];
      out.weights = weighted * u;
      return out;
    } catch (const SingularSystemError&) {
      // fall through to the local mean
    }
  }
  return local_mean_fallback(fit, q, w);
}

// ---------------------------------------------------------------------------
// Uniform interface
// ---------------------------------------------------------------------------

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kNone:
      return "none";
    case ModelKind::kGreg:
      return "greg";
    case ModelKind::kKnn:
      return "knn";
    case ModelKind::kLocalPoly:
      return "localpoly";
  }
  return "unknown";
}

ModelKind kind_of(const WorkingModelFit& fit) {
  switch (fit.index()) {
    case 1:
      return ModelKind::kGreg;
    case 2:
      return ModelKind::kKnn;
    case 3:
      return ModelKind::kLocalPoly;
    default:
      return ModelKind::kNone;
  }
}

WorkingModelFit fit_working_model(const WorkingModelSpec& spec, const SampleState& state,
                                  const Matrix& aux_over_sr, const Vector& y_over_sr,
                                  const Vector* p_hat_over_sr) {
  switch (spec.kind) {
    case ModelKind::kNone:
      return NoModel{};
    case ModelKind::kGreg: {
      GregOptions options;
      options.weighting = spec.greg_weighting;
      options.features = spec.features;
      return fit_greg(state, aux_over_sr, y_over_sr, options, p_hat_over_sr);
    }
    case ModelKind::kKnn:
      return fit_knn(state, aux_over_sr, y_over_sr, spec.k_neighbors, spec.features);
    case ModelKind::kLocalPoly: {
      LocalPolyOptions options;
      options.order = spec.poly_order;
      options.kernel = spec.kernel;
      options.weight_mode = spec.kernel_weight_mode;
      options.bandwidth = spec.bandwidth;
      options.features = spec.features;
      return fit_local_poly(state, aux_over_sr, y_over_sr, options, p_hat_over_sr);
    }
  }
  throw ConfigurationError("unknown working model kind");
}

double predict(const WorkingModelFit& fit, const Eigen::Ref<const RowVector>& aux_row) {
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NoModel>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, GregFit>) {
          return m.predict(aux_row);
        } else if constexpr (std::is_same_v<T, KnnFit>) {
          return predict_knn(m, aux_row);
        } else {
          return predict_local_poly(m, aux_row).value;
        }
      },
      fit);
}

Vector predict_all(const WorkingModelFit& fit, const Matrix& aux) {
  if (const auto* greg = std::get_if<GregFit>(&fit)) return greg->features.apply(aux) * greg->coeff;
  Vector out(aux.rows());
  for (Index k = 0; k < aux.rows(); ++k) out[k] = predict(fit, aux.row(k));
  return out;
}

Matrix smoother_rows(const WorkingModelFit& fit, const Matrix& aux) {
  return std::visit(
      [&](const auto& m) -> Matrix {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, NoModel>) {
          return Matrix(aux.rows(), 0);
        } else if constexpr (std::is_same_v<T, GregFit>) {
          // x' A^-1 X_r' C^-1
          const Matrix rhs = m.covariates_sr.transpose() * m.c_over_sr.cwiseInverse().asDiagonal();
          const Matrix solved = solve_spd_many(m.normal_matrix, rhs, "GREG smoother");
          return m.features.apply(aux) * solved;
        } else if constexpr (std::is_same_v<T, KnnFit>) {
          Matrix out = Matrix::Zero(aux.rows(), m.coords.rows());
          const double inv_k = 1.0 / static_cast<double>(m.k_neighbors);
          for (Index k = 0; k < aux.rows(); ++k) {
            for (Index l : knn_neighbors(m, aux.row(k))) out(k, l) += inv_k;
          }
          return out;
        } else {
          Matrix out(aux.rows(), m.coords.rows());
          for (Index k = 0; k < aux.rows(); ++k) out.row(k) = predict_local_poly(m, aux.row(k)).weights.transpose();
          return out;
        }
      },
      fit);
}

Index local_poly_fallbacks(const LocalPolyFit& fit, const Matrix& aux) {
  Index count = 0;
  for (Index k = 0; k < aux.rows(); ++k) {
    if (predict_local_poly(fit, aux.row(k)).fallback) ++count;
  }
  return count;
}

}  // namespace nwa
