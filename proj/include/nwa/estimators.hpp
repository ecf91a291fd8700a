#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nwa/design.hpp"
#include "nwa/linalg.hpp"
#include "nwa/response.hpp"
#include "nwa/working_models.hpp"

namespace nwa {

class Population;

enum class EstimatorKind {
  kHorvitzThompson,
  kDoubleExpansion,
  kNwa,
  kDifference,
  kModelAssisted,
  kTwoPhaseModelAssisted,
  kModelAssistedSampleLevel,
  kImputed,
  kNaive,
};

const char* to_string(EstimatorKind kind);

struct EstimateReport {
  double estimate = 0.0;
  // Per-respondent weights with sum w_k y_k == estimate; absent when not
  // requested or not defined.
  std::optional<Vector> weights;
  EstimatorKind kind = EstimatorKind::kHorvitzThompson;
  Index n = 0;
  Index n_r = 0;
  std::vector<std::string> tags;
};

// Vectors "over s" follow state.sample, "over s_r" follow state.respondents.

// sum_s y/pi
EstimateReport ht(const SampleState& state, const Vector& y_over_s);

// sum_{s_r} y/(pi p), p the true response probabilities over s_r.
EstimateReport double_expansion(const SampleState& state, const Vector& y_over_sr, const Vector& p_over_sr);

// sum_{s_r} y/(pi p_hat)
EstimateReport nwa(const SampleState& state, const Vector& y_over_sr, const Vector& p_hat_over_sr);
EstimateReport nwa(const SampleState& state, const Vector& y_over_sr, const ResponseFit& fit);

// sum_U m + sum_s (y - m)/pi with m given for every population unit.
EstimateReport difference_estimator(const SampleState& state, const Vector& m_over_U, const Vector& y_over_s);

// sum_U m_r(x) + sum_{s_r} (y - m_r(x))/(pi p_hat).
//
// `aux_U` holds the raw auxiliary rows of every population unit (the fit's
// feature map selects columns). With `with_weights` the weighted form is
// evaluated as well: the totals form for GREG, the neighbour counts for K-NN,
// and the smoother weights for local polynomials.
EstimateReport nwa_model_assisted(const Matrix& aux_U, const SampleState& state, const WorkingModelFit& model,
                                  const Vector& p_hat_over_sr, const Vector& y_over_sr, bool with_weights = true);
EstimateReport nwa_model_assisted(const Population& pop, const SampleState& state, const WorkingModelFit& model,
                                  const ResponseFit& fit, bool with_weights = true);
// Respondent auxiliary rows given explicitly, for callers whose population
// rows are not indexed by the sample's unit labels.
EstimateReport nwa_model_assisted(const Matrix& aux_U, const Matrix& aux_over_sr, const SampleState& state,
                                  const WorkingModelFit& model, const Vector& p_hat_over_sr,
                                  const Vector& y_over_sr, bool with_weights = true);

// GREG only, from population column totals instead of unit data:
// w_k = 1/(pi p_hat) + (t^X - t^X_NWA)' (sum x x'/c)^-1 x_k / c_k.
EstimateReport greg_model_assisted_from_totals(const Vector& aux_totals, Index n_units, const SampleState& state,
                                               const GregFit& model, const Vector& p_hat_over_sr,
                                               const Vector& y_over_sr);

// As nwa_model_assisted with the true response probabilities.
EstimateReport two_phase_model_assisted(const Matrix& aux_U, const SampleState& state,
                                        const WorkingModelFit& model, const Vector& p_over_sr,
                                        const Vector& y_over_sr, bool with_weights = true);

// sum_s m_r(x)/pi + sum_{s_r} (y - m_r(x))/(pi p_hat); needs aux only on s.
EstimateReport nwa_model_assisted_sample_level(const Matrix& aux_over_s, const SampleState& state,
                                               const WorkingModelFit& model, const Vector& p_hat_over_sr,
                                               const Vector& y_over_sr, bool with_weights = true);

// sum_{s_r} y/pi + sum_{s \ s_r} m_r(x)/pi
EstimateReport imputed(const Matrix& aux_over_s, const SampleState& state, const WorkingModelFit& model,
                       const Vector& y_over_sr, bool with_weights = true);

// N/n_r sum_{s_r} y
EstimateReport naive(const SampleState& state, const Vector& y_over_sr, Index n_units);

// Respondent rows of a matrix given over s.
Matrix respondent_rows(const SampleState& state, const Matrix& over_s);

}  // namespace nwa
