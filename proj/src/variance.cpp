#include "nwa/variance.hpp"

#include <string>

#include "nwa/errors.hpp"

namespace nwa {

double offdiagonal_design_sum(const DesignProbs& design, std::span<const Index> units, const Vector& z) {
  const auto n = static_cast<Index>(units.size());
  if (z.size() != n) throw DimensionError("one value per unit expected");
  if (n < 2) return 0.0;

  if (design.as_srswor() != nullptr) {
    // Constant Delta/pi_kl collapses the double sum to (sum z)^2 - sum z^2.
    const double pi_kl = design.joint(units[0], units[1]);
    if (pi_kl <= 0.0) throw DesignError("second-order inclusion probability is 0");
    const double factor = design.delta(units[0], units[1]) / pi_kl;
    const double s = compensated_sum(z);
    const double s2 = compensated_sum(z.array().square().matrix());
    return factor * (s * s - s2);
  }

  CompensatedSum total;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const Index k = units[static_cast<std::size_t>(i)];
      const Index l = units[static_cast<std::size_t>(j)];
      const double pi_kl = design.joint(k, l);
      if (pi_kl <= 0.0) {
        throw DesignError("pi_kl = 0 for units " + std::to_string(k) + " and " + std::to_string(l));
      }
      total += 2.0 * z[i] * z[j] * design.delta(k, l) / pi_kl;
    }
  }
  return total.value();
}

double ht_variance_estimate(const SampleState& state, const Vector& y_over_s) {
  if (state.n() == 0) throw DomainError("empty sample");
  if (y_over_s.size() != state.n()) throw DimensionError("outcome vector must have one entry per sampled unit");
  const Vector pi = state.pi_over_sample();
  const Vector z = y_over_s.cwiseQuotient(pi);
  // Diagonal: Delta_kk / pi_kk = 1 - pi_k.
  CompensatedSum total;
  for (Index i = 0; i < z.size(); ++i) total += (1.0 - pi[i]) * z[i] * z[i];
  total += offdiagonal_design_sum(state.design, state.sample, z);
  return total.value();
}

namespace {

void check_respondent_vectors(const SampleState& state, const Vector& a, const Matrix& x, const Vector& p,
                              const Vector& y) {
  const Index n_r = state.n_r();
  if (n_r == 0) throw DomainError("no respondents");
  if (a.size() != n_r || x.rows() != n_r || p.size() != n_r || y.size() != n_r) {
    throw DimensionError("variance inputs must have one entry per respondent");
  }
  for (Index i = 0; i < n_r; ++i) {
    if (!(p[i] > 0.0 && p[i] <= 1.0)) throw DomainError("response probability outside (0, 1]");
  }
}

struct GammaFit {
  Vector gamma;
  Vector residuals;
  bool ridge_applied = false;
};

GammaFit fit_gamma(const Vector& pi, const Matrix& x, const Vector& p, const Vector& r) {
  GammaFit out;
  if (x.cols() == 0) {
    out.gamma = Vector(0);
    out.residuals = r;
    return out;
  }
  const Vector w = ((1.0 - p.array()) / (pi.array() * p.array())).matrix();
  const Matrix a = x.transpose() * w.asDiagonal() * x;
  const Vector b = x.transpose() * w.cwiseProduct(r);
  if ((w.array() == 0.0).all()) {
    // Full response everywhere: gamma_hat does not enter the components.
    out.gamma = Vector::Zero(x.cols());
  } else {
    SymmetricSolve solved = solve_spd_with_ridge(a, b, "gamma_hat system");
    out.gamma = std::move(solved.solution);
    out.ridge_applied = solved.ridge_applied;
  }
  out.residuals = r - x * out.gamma;
  return out;
}

// sum_{k,l in s_r} v_k v_l Delta*_kl/pi*_kl; diagonal factor 1 - pi_k p_k.
double two_phase_quadratic(const SampleState& state, const Vector& pi, const Vector& p, const Vector& v) {
  CompensatedSum total;
  for (Index i = 0; i < v.size(); ++i) total += (1.0 - pi[i] * p[i]) * v[i] * v[i];
  // Off the diagonal Delta_kl p_k p_l / (pi_kl p_k p_l) = Delta_kl/pi_kl.
  total += offdiagonal_design_sum(state.design, state.respondents, v);
  return total.value();
}

}  // namespace

VarianceReport nwa_ma_variance_estimate(const SampleState& state, const Vector& m_over_sr,
                                        const Matrix& resp_x_over_sr, const Vector& p_hat_over_sr,
                                        const Vector& y_over_sr) {
  check_respondent_vectors(state, m_over_sr, resp_x_over_sr, p_hat_over_sr, y_over_sr);
  const Vector pi = state.pi_over_respondents();
  const Vector& p = p_hat_over_sr;

  GammaFit g = fit_gamma(pi, resp_x_over_sr, p, y_over_sr - m_over_sr);
  const Vector& e = g.residuals;

  CompensatedSum sampling;
  CompensatedSum nonresponse;
  for (Index i = 0; i < e.size(); ++i) {
    const double e2 = e[i] * e[i];
    sampling += (1.0 - pi[i]) / (pi[i] * pi[i]) * e2 / p[i];
    nonresponse += (1.0 / (pi[i] * pi[i])) * ((1.0 - p[i]) / (p[i] * p[i])) * e2;
  }
  // Off-diagonal: Delta_kl/(pi_kl pi_k pi_l) (e_k/p_k)(e_l/p_l) = Delta_kl/pi_kl z_k z_l.
  const Vector z = e.cwiseQuotient(pi.cwiseProduct(p));
  sampling += offdiagonal_design_sum(state.design, state.respondents, z);

  VarianceReport r;
  r.sampling_component = sampling.value();
  r.nonresponse_component = nonresponse.value();
  const double sum = r.sampling_component + r.nonresponse_component;
  r.floored = sum < 0.0;
  r.total_var = r.floored ? 0.0 : sum;
  r.ridge_applied = g.ridge_applied;
  r.gamma_hat = std::move(g.gamma);
  r.residuals = e;
  return r;
}

VarianceReport nwa_ma_variance_estimate(const SampleState& state, const WorkingModelFit& model,
                                        const Matrix& aux_over_sr, const Matrix& resp_x_over_sr,
                                        const Vector& p_hat_over_sr, const Vector& y_over_sr) {
  if (aux_over_sr.rows() != state.n_r()) throw DimensionError("auxiliary rows must match the respondents");
  return nwa_ma_variance_estimate(state, predict_all(model, aux_over_sr), resp_x_over_sr, p_hat_over_sr,
                                  y_over_sr);
}

LinearizedVariance greg_linearized_variance(const SampleState& state, const WorkingModelFit& model,
                                            const Matrix& resp_x_over_sr, const Vector& p_over_sr,
                                            const Vector& y_over_sr, LinearizationMode mode) {
  const auto* greg = std::get_if<GregFit>(&model);
  if (greg == nullptr) {
    throw UnsupportedModelError(std::string("linearized variance is available for GREG only, got ") +
                                to_string(kind_of(model)));
  }
  if (greg->covariates_sr.rows() != state.n_r()) throw DimensionError("GREG fit does not match the respondents");
  const Vector m = greg->covariates_sr * greg->coeff;
  check_respondent_vectors(state, m, resp_x_over_sr, p_over_sr, y_over_sr);
  const Vector pi = state.pi_over_respondents();
  const Vector pip = pi.cwiseProduct(p_over_sr);

  LinearizedVariance out;
  const Vector u = (y_over_sr - m).cwiseQuotient(pip);
  out.v1 = two_phase_quadratic(state, pi, p_over_sr, u);
  if (mode == LinearizationMode::kKnownP) {
    out.total = out.v1;
    out.v2 = 0.0;
    return out;
  }
  GammaFit g = fit_gamma(pi, resp_x_over_sr, p_over_sr, y_over_sr - m);
  const Vector v = g.residuals.cwiseQuotient(pip);
  out.total = two_phase_quadratic(state, pi, p_over_sr, v);
  out.v2 = out.total - out.v1;
  return out;
}

}  // namespace nwa
