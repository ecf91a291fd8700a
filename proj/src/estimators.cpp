#include "nwa/estimators.hpp"

#include <string>

#include "nwa/errors.hpp"
#include "nwa/population.hpp"

namespace nwa {

const char* to_string(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::kHorvitzThompson:
      return "ht";
    case EstimatorKind::kDoubleExpansion:
      return "double_expansion";
    case EstimatorKind::kNwa:
      return "nwa";
    case EstimatorKind::kDifference:
      return "difference";
    case EstimatorKind::kModelAssisted:
      return "nwa_model_assisted";
    case EstimatorKind::kTwoPhaseModelAssisted:
      return "two_phase_model_assisted";
    case EstimatorKind::kModelAssistedSampleLevel:
      return "nwa_model_assisted_sample_level";
    case EstimatorKind::kImputed:
      return "imputed";
    case EstimatorKind::kNaive:
      return "naive";
  }
  return "unknown";
}

namespace {

void require_sample(const SampleState& state) {
  if (state.n() == 0) throw DomainError("empty sample");
}

void require_respondents(const SampleState& state, const Vector& y_over_sr) {
  if (state.n_r() == 0) throw DomainError("no respondents");
  if (y_over_sr.size() != state.n_r()) {
    throw DimensionError("respondent outcome vector has " + std::to_string(y_over_sr.size()) +
                         " entries, expected " + std::to_string(state.n_r()));
  }
}

void require_probabilities(const Vector& p, Index n_r, const char* what) {
  if (p.size() != n_r) throw DimensionError(std::string(what) + " must have one entry per respondent");
  for (Index i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0 && p[i] <= 1.0)) throw DomainError(std::string(what) + " outside (0, 1]");
  }
}

EstimateReport make_report(EstimatorKind kind, const SampleState& state, double estimate,
                           std::optional<Vector> weights = std::nullopt) {
  EstimateReport r;
  r.kind = kind;
  r.estimate = estimate;
  r.weights = std::move(weights);
  r.n = state.n();
  r.n_r = state.n_r();
  return r;
}

struct CoreResult {
  double estimate = 0.0;
  std::optional<Vector> weights;
};

// Shared evaluation of
//   sum_E g_k m(x_k) + sum_{s_r} (dy_i y_i - dm_i m(x_i))
// and its weighted form
//   w_l = dy_l + sum_E g_k L_kl - sum_{s_r} dm_i L_il,
// where L is the smoother of the working model (m = L y_r).
CoreResult model_assisted_core(const Matrix& aux_E, const Vector& g, const Matrix& aux_sr,
                               const WorkingModelFit& model, const Vector& dy, const Vector& dm,
                               const Vector& y_sr, bool with_weights) {
  const Index n_r = y_sr.size();
  const bool need_sr = (dm.array() != 0.0).any();
  CompensatedSum total;
  for (Index i = 0; i < n_r; ++i) total += dy[i] * y_sr[i];

  CoreResult out;
  Vector acc = Vector::Zero(n_r);

  if (std::holds_alternative<NoModel>(model)) {
    out.estimate = total.value();
    if (with_weights) out.weights = dy;
    return out;
  }

  if (const auto* greg = std::get_if<GregFit>(&model)) {
    const Vector m_E = predict_all(model, aux_E);
    for (Index k = 0; k < m_E.size(); ++k) total += g[k] * m_E[k];
    const Matrix x_sr = greg->features.apply(aux_sr);
    if (need_sr) {
      const Vector m_sr = x_sr * greg->coeff;
      for (Index i = 0; i < n_r; ++i) total += -dm[i] * m_sr[i];
    }
    out.estimate = total.value();
    if (with_weights) {
      const Matrix x_E = greg->features.apply(aux_E);
      const Vector gap = x_E.transpose() * g - x_sr.transpose() * dm;
      const Vector h = solve_spd_with_ridge(greg->normal_matrix, gap, "GREG weights").solution;
      out.weights = dy + (x_sr * h).cwiseQuotient(greg->c_over_sr);
    }
    return out;
  }

  if (const auto* knn = std::get_if<KnnFit>(&model)) {
    const double inv_k = 1.0 / static_cast<double>(knn->k_neighbors);
    auto visit = [&](const Matrix& rows, const Vector& coef, double sign) {
      for (Index k = 0; k < rows.rows(); ++k) {
        if (coef[k] == 0.0) continue;
        double m = 0.0;
        for (Index l : knn_neighbors(*knn, rows.row(k))) {
          m += knn->y[l];
          acc[l] += sign * coef[k] * inv_k;
        }
        total += sign * coef[k] * m * inv_k;
      }
    };
    visit(aux_E, g, 1.0);
    if (need_sr) visit(aux_sr, dm, -1.0);
    out.estimate = total.value();
    if (with_weights) out.weights = dy + acc;
    return out;
  }

  const auto& poly = std::get<LocalPolyFit>(model);
  auto visit = [&](const Matrix& rows, const Vector& coef, double sign) {
    for (Index k = 0; k < rows.rows(); ++k) {
      if (coef[k] == 0.0) continue;
      const LocalPolyPrediction p = predict_local_poly(poly, rows.row(k));
      total += sign * coef[k] * p.value;
      if (with_weights) acc += (sign * coef[k]) * p.weights;
    }
  };
  visit(aux_E, g, 1.0);
  if (need_sr) visit(aux_sr, dm, -1.0);
  out.estimate = total.value();
  if (with_weights) out.weights = dy + acc;
  return out;
}

Matrix respondent_rows_of_population(const Matrix& aux_U, const SampleState& state) {
  for (Index unit : state.respondents) {
    if (unit < 0 || unit >= aux_U.rows()) throw DimensionError("respondent index outside the population");
  }
  return select_rows(aux_U, state.respondents);
}

EstimateReport population_level(EstimatorKind kind, const Matrix& aux_U, const Matrix& aux_sr,
                                 const SampleState& state, const WorkingModelFit& model, const Vector& p_over_sr,
                                 const Vector& y_over_sr, bool with_weights) {
  require_respondents(state, y_over_sr);
  require_probabilities(p_over_sr, state.n_r(), "response probabilities");
  if (aux_sr.rows() != state.n_r() || aux_sr.cols() != aux_U.cols()) {
    throw DimensionError("respondent auxiliary rows do not match the population layout");
  }
  const Vector d = state.pi_over_respondents().cwiseProduct(p_over_sr).cwiseInverse();
  CoreResult core =
      model_assisted_core(aux_U, Vector::Ones(aux_U.rows()), aux_sr, model, d, d, y_over_sr, with_weights);
  EstimateReport r = make_report(kind, state, core.estimate, std::move(core.weights));
  r.tags.push_back(std::string("model=") + to_string(kind_of(model)));
  return r;
}

}  // namespace

Matrix respondent_rows(const SampleState& state, const Matrix& over_s) {
  if (over_s.rows() != state.n()) throw DimensionError("matrix over s must have one row per sampled unit");
  return select_rows(over_s, state.respondent_positions());
}

EstimateReport ht(const SampleState& state, const Vector& y_over_s) {
  require_sample(state);
  if (y_over_s.size() != state.n()) throw DimensionError("outcome vector must have one entry per sampled unit");
  const Vector d = state.pi_over_sample().cwiseInverse();
  return make_report(EstimatorKind::kHorvitzThompson, state, compensated_sum(d.cwiseProduct(y_over_s)));
}

EstimateReport double_expansion(const SampleState& state, const Vector& y_over_sr, const Vector& p_over_sr) {
  require_respondents(state, y_over_sr);
  require_probabilities(p_over_sr, state.n_r(), "response probabilities");
  const Vector w = state.pi_over_respondents().cwiseProduct(p_over_sr).cwiseInverse();
  return make_report(EstimatorKind::kDoubleExpansion, state, compensated_sum(w.cwiseProduct(y_over_sr)), w);
}

EstimateReport nwa(const SampleState& state, const Vector& y_over_sr, const Vector& p_hat_over_sr) {
  require_respondents(state, y_over_sr);
  require_probabilities(p_hat_over_sr, state.n_r(), "estimated response probabilities");
  const Vector w = state.pi_over_respondents().cwiseProduct(p_hat_over_sr).cwiseInverse();
  return make_report(EstimatorKind::kNwa, state, compensated_sum(w.cwiseProduct(y_over_sr)), w);
}

EstimateReport nwa(const SampleState& state, const Vector& y_over_sr, const ResponseFit& fit) {
  EstimateReport r = nwa(state, y_over_sr, fit.p_hat);
  r.tags.push_back(std::string("response=") + to_string(fit.method));
  return r;
}

EstimateReport difference_estimator(const SampleState& state, const Vector& m_over_U, const Vector& y_over_s) {
  require_sample(state);
  if (y_over_s.size() != state.n()) throw DimensionError("outcome vector must have one entry per sampled unit");
  if (m_over_U.size() != state.design.population_size()) {
    throw DimensionError("predictions must cover every population unit");
  }
  CompensatedSum total;
  for (Index k = 0; k < m_over_U.size(); ++k) total += m_over_U[k];
  for (Index i = 0; i < state.n(); ++i) {
    const Index unit = state.sample[static_cast<std::size_t>(i)];
    total += (y_over_s[i] - m_over_U[unit]) / state.design.first(unit);
  }
  return make_report(EstimatorKind::kDifference, state, total.value());
}

EstimateReport nwa_model_assisted(const Matrix& aux_U, const SampleState& state, const WorkingModelFit& model,
                                  const Vector& p_hat_over_sr, const Vector& y_over_sr, bool with_weights) {
  return population_level(EstimatorKind::kModelAssisted, aux_U, respondent_rows_of_population(aux_U, state), state,
                          model, p_hat_over_sr, y_over_sr, with_weights);
}

EstimateReport nwa_model_assisted(const Matrix& aux_U, const Matrix& aux_over_sr, const SampleState& state,
                                  const WorkingModelFit& model, const Vector& p_hat_over_sr,
                                  const Vector& y_over_sr, bool with_weights) {
  return population_level(EstimatorKind::kModelAssisted, aux_U, aux_over_sr, state, model, p_hat_over_sr,
                          y_over_sr, with_weights);
}

EstimateReport nwa_model_assisted(const Population& pop, const SampleState& state, const WorkingModelFit& model,
                                  const ResponseFit& fit, bool with_weights) {
  EstimateReport r = nwa_model_assisted(pop.aux(), state, model, fit.p_hat, select(pop.outcome(), state.respondents),
                                        with_weights);
  r.tags.push_back(std::string("response=") + to_string(fit.method));
  return r;
}

EstimateReport greg_model_assisted_from_totals(const Vector& aux_totals, Index n_units, const SampleState& state,
                                               const GregFit& model, const Vector& p_hat_over_sr,
                                               const Vector& y_over_sr) {
  require_respondents(state, y_over_sr);
  require_probabilities(p_hat_over_sr, state.n_r(), "estimated response probabilities");
  if (model.covariates_sr.rows() != state.n_r()) throw DimensionError("GREG fit does not match the respondents");
  const Vector t_x = model.features.apply_totals(aux_totals, n_units);
  if (t_x.size() != model.coeff.size()) throw DimensionError("auxiliary totals do not match the GREG features");

  const Vector d = state.pi_over_respondents().cwiseProduct(p_hat_over_sr).cwiseInverse();
  const Matrix& x = model.covariates_sr;
  const Vector residual = y_over_sr - x * model.coeff;
  CompensatedSum total;
  total += t_x.dot(model.coeff);
  for (Index i = 0; i < residual.size(); ++i) total += d[i] * residual[i];

  const Vector gap = t_x - x.transpose() * d;
  const Vector h = solve_spd_with_ridge(model.normal_matrix, gap, "GREG weights").solution;
  Vector w = d + (x * h).cwiseQuotient(model.c_over_sr);
  EstimateReport r = make_report(EstimatorKind::kModelAssisted, state, total.value(), std::move(w));
  r.tags.push_back("model=greg");
  r.tags.push_back("population=totals");
  return r;
}

EstimateReport two_phase_model_assisted(const Matrix& aux_U, const SampleState& state,
                                        const WorkingModelFit& model, const Vector& p_over_sr,
                                        const Vector& y_over_sr, bool with_weights) {
  return population_level(EstimatorKind::kTwoPhaseModelAssisted, aux_U, respondent_rows_of_population(aux_U, state),
                          state, model, p_over_sr, y_over_sr, with_weights);
}

EstimateReport nwa_model_assisted_sample_level(const Matrix& aux_over_s, const SampleState& state,
                                               const WorkingModelFit& model, const Vector& p_hat_over_sr,
                                               const Vector& y_over_sr, bool with_weights) {
  require_sample(state);
  require_respondents(state, y_over_sr);
  require_probabilities(p_hat_over_sr, state.n_r(), "estimated response probabilities");
  const Vector d = state.pi_over_respondents().cwiseProduct(p_hat_over_sr).cwiseInverse();
  const Matrix aux_sr = respondent_rows(state, aux_over_s);
  CoreResult core = model_assisted_core(aux_over_s, state.pi_over_sample().cwiseInverse(), aux_sr, model, d, d,
                                        y_over_sr, with_weights);
  EstimateReport r = make_report(EstimatorKind::kModelAssistedSampleLevel, state, core.estimate,
                                 std::move(core.weights));
  r.tags.push_back(std::string("model=") + to_string(kind_of(model)));
  return r;
}

EstimateReport imputed(const Matrix& aux_over_s, const SampleState& state, const WorkingModelFit& model,
                       const Vector& y_over_sr, bool with_weights) {
  require_sample(state);
  require_respondents(state, y_over_sr);
  const Matrix aux_sr = respondent_rows(state, aux_over_s);
  // Nonrespondents carry 1/pi, respondents 0.
  Vector g = state.pi_over_sample().cwiseInverse();
  for (Index pos : state.respondent_positions()) g[pos] = 0.0;
  const Vector dy = state.pi_over_respondents().cwiseInverse();
  CoreResult core = model_assisted_core(aux_over_s, g, aux_sr, model, dy, Vector::Zero(state.n_r()), y_over_sr,
                                        with_weights);
  EstimateReport r = make_report(EstimatorKind::kImputed, state, core.estimate, std::move(core.weights));
  r.tags.push_back(std::string("model=") + to_string(kind_of(model)));
  return r;
}

EstimateReport naive(const SampleState& state, const Vector& y_over_sr, Index n_units) {
  require_respondents(state, y_over_sr);
  if (n_units < 1) throw DomainError("population size must be positive");
  const double scale = static_cast<double>(n_units) / static_cast<double>(state.n_r());
  return make_report(EstimatorKind::kNaive, state, scale * compensated_sum(y_over_sr),
                     Vector::Constant(state.n_r(), scale));
}

}  // namespace nwa
