#pragma once

#include <span>

#include "nwa/design.hpp"
#include "nwa/linalg.hpp"
#include "nwa/working_models.hpp"

namespace nwa {

// sum_{k,l in s} (y_k/pi_k)(y_l/pi_l) Delta_kl/pi_kl. O(n) for SRSWOR.
// Throws DesignError when a sampled pair has pi_kl = 0.
double ht_variance_estimate(const SampleState& state, const Vector& y_over_s);

// sum_{k != l in units} z_k z_l Delta_kl/pi_kl under the first-phase design.
double offdiagonal_design_sum(const DesignProbs& design, std::span<const Index> units, const Vector& z);

struct VarianceReport {
  double total_var = 0.0;  // sampling + nonresponse, floored at 0
  double sampling_component = 0.0;
  double nonresponse_component = 0.0;
  bool floored = false;  // sampling + nonresponse was negative
  bool ridge_applied = false;
  Vector gamma_hat;
  Vector residuals;  // e_k over s_r
};

// Variance estimator of the NWA model-assisted total:
//   gamma_hat = (sum (1/pi)((1-p)/p) x x')^-1 sum (1/pi)((1-p)/p) x (y - m)
//   e = y - m - x' gamma_hat
//   sampling    = sum (1-pi)/pi^2 e^2/p + sum_{k!=l} Delta_kl/(pi_kl pi_k pi_l) (e_k/p_k)(e_l/p_l)
//   nonresponse = sum (1/pi^2)(1-p)/p^2 e^2
// `resp_x_over_sr` are the response-model covariates, `m_over_sr` the
// working-model predictions at the respondents.
VarianceReport nwa_ma_variance_estimate(const SampleState& state, const Vector& m_over_sr,
                                        const Matrix& resp_x_over_sr, const Vector& p_hat_over_sr,
                                        const Vector& y_over_sr);

// Same, predicting m at the respondents' auxiliary rows with `model`.
VarianceReport nwa_ma_variance_estimate(const SampleState& state, const WorkingModelFit& model,
                                        const Matrix& aux_over_sr, const Matrix& resp_x_over_sr,
                                        const Vector& p_hat_over_sr, const Vector& y_over_sr);

enum class LinearizationMode { kKnownP, kEstimatedP };

struct LinearizedVariance {
  double total = 0.0;
  // Estimated-p mode: v1 is the known-p part built on u = (y - m)/(pi p_hat),
  // v2 = total - v1 the part due to estimating p. Known-p mode: v1 = total.
  double v1 = 0.0;
  double v2 = 0.0;
};

// Linearized variance of the GREG model-assisted total under the two-phase
// design, sum_{k,l in s_r} v_k v_l Delta*_kl / pi*_kl.
//
// Known p: v = (y - x'B_r)/(pi p) with the true p.
// Estimated p (calibration-fitted p_hat): the derivative through lambda_hat
// gives v = (y - x'B_r - x'gamma_hat)/(pi p_hat), gamma_hat as in the
// variance estimator above, with `resp_x_over_sr` the response covariates.
// Throws UnsupportedModelError for any working model other than GREG.
LinearizedVariance greg_linearized_variance(const SampleState& state, const WorkingModelFit& model,
                                            const Matrix& resp_x_over_sr, const Vector& p_over_sr,
                                            const Vector& y_over_sr, LinearizationMode mode);

}  // namespace nwa
