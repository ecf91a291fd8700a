#include "nwa/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "nwa/errors.hpp"
#include "nwa/population.hpp"
#include "nwa/rng.hpp"

namespace nwa {

namespace {

void check_probability(double value, const char* what) {
  if (!(value > 0.0 && value <= 1.0)) {
    throw DesignError(std::string(what) + " must lie in (0, 1], got " + std::to_string(value));
  }
}

}  // namespace

// -------------------------------------------------------------------------
// DesignProbs
// -------------------------------------------------------------------------

DesignProbs DesignProbs::srswor(Index population_size, Index sample_size) {
  if (population_size < 1) throw DomainError("population size must be positive");
  if (sample_size < 1 || sample_size > population_size) {
    throw DomainError("SRSWOR sample size " + std::to_string(sample_size) + " outside [1, " +
                      std::to_string(population_size) + "]");
  }
  return DesignProbs(Srswor{population_size, sample_size});
}

DesignProbs DesignProbs::poisson(Vector first_order) {
  if (first_order.size() == 0) throw DimensionError("Poisson design needs at least one unit");
  for (Index k = 0; k < first_order.size(); ++k) check_probability(first_order[k], "inclusion probability");
  return DesignProbs(Poisson{std::move(first_order)});
}

DesignProbs DesignProbs::dense(Vector first_order, Matrix second_order) {
  const Index n = first_order.size();
  if (n == 0 || second_order.rows() != n || second_order.cols() != n) {
    throw DimensionError("second-order matrix must be N x N with N = length of first-order vector");
  }
  for (Index k = 0; k < n; ++k) {
    check_probability(first_order[k], "inclusion probability");
    if (std::abs(second_order(k, k) - first_order[k]) > 1e-12) {
      throw DesignError("pi_kk must equal pi_k (unit " + std::to_string(k) + ")");
    }
    for (Index l = 0; l < n; ++l) {
      // pi_kl may legitimately be 0 for some designs; variance estimators
      // reject those separately.
      if (second_order(k, l) < 0.0 || second_order(k, l) > 1.0) {
        throw DesignError("pi_kl outside [0, 1]");
      }
      if (std::abs(second_order(k, l) - second_order(l, k)) > 1e-12) {
        throw DesignError("second-order matrix must be symmetric");
      }
    }
  }
  return DesignProbs(Dense{std::move(first_order), std::move(second_order)});
}

Index DesignProbs::population_size() const {
  return std::visit(
      [](const auto& d) -> Index {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Srswor>) {
          return d.population_size;
        } else {
          return d.first_order.size();
        }
      },
      repr_);
}

double DesignProbs::first(Index k) const {
  return std::visit(
      [k](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Srswor>) {
          return static_cast<double>(d.sample_size) / static_cast<double>(d.population_size);
        } else {
          return d.first_order[k];
        }
      },
      repr_);
}

double DesignProbs::joint(Index k, Index l) const {
  if (k == l) return first(k);
  return std::visit(
      [k, l](const auto& d) -> double {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Srswor>) {
          const double n = static_cast<double>(d.sample_size);
          const double big_n = static_cast<double>(d.population_size);
          if (d.population_size == 1) return 1.0;
          return n * (n - 1.0) / (big_n * (big_n - 1.0));
        } else if constexpr (std::is_same_v<T, Poisson>) {
          return d.first_order[k] * d.first_order[l];
        } else {
          return d.second_order(k, l);
        }
      },
      repr_);
}

Vector DesignProbs::first_order() const {
  const Index n = population_size();
  if (n > kMaxDense) throw DomainError("refusing to materialize design for N > " + std::to_string(kMaxDense));
  Vector out(n);
  for (Index k = 0; k < n; ++k) out[k] = first(k);
  return out;
}

Matrix DesignProbs::second_order() const {
  const Index n = population_size();
  if (n > kMaxDense) throw DomainError("refusing to materialize design for N > " + std::to_string(kMaxDense));
  Matrix out(n, n);
  for (Index k = 0; k < n; ++k) {
    for (Index l = 0; l < n; ++l) out(k, l) = joint(k, l);
  }
  return out;
}

// -------------------------------------------------------------------------
// SampleState
// -------------------------------------------------------------------------

Vector SampleState::pi_over_sample() const {
  Vector out(n());
  for (Index i = 0; i < n(); ++i) out[i] = design.first(sample[static_cast<std::size_t>(i)]);
  return out;
}

Vector SampleState::pi_over_respondents() const {
  Vector out(n_r());
  for (Index i = 0; i < n_r(); ++i) out[i] = design.first(respondents[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<Index> SampleState::respondent_positions() const {
  std::vector<Index> out;
  out.reserve(respondents.size());
  std::size_t j = 0;
  for (Index unit : respondents) {
    while (j < sample.size() && sample[j] < unit) ++j;
    if (j == sample.size() || sample[j] != unit) {
      throw DomainError("respondent " + std::to_string(unit) + " is not in the sample");
    }
    out.push_back(static_cast<Index>(j));
  }
  return out;
}

Eigen::VectorXi SampleState::response_indicator() const {
  Eigen::VectorXi r = Eigen::VectorXi::Zero(n());
  for (Index pos : respondent_positions()) r[pos] = 1;
  return r;
}

std::vector<Index> SampleState::nonrespondents() const {
  std::vector<Index> out;
  std::set_difference(sample.begin(), sample.end(), respondents.begin(), respondents.end(),
                      std::back_inserter(out));
  return out;
}

// -------------------------------------------------------------------------
// Sampling
// -------------------------------------------------------------------------

SampleState srswor_sample(const Population& pop, Index n, RngStream& rng) {
  const Index big_n = pop.n_units();
  if (n < 1 || n > big_n) {
    throw DomainError("sample size " + std::to_string(n) + " outside [1, " + std::to_string(big_n) + "]");
  }
  std::vector<Index> units(static_cast<std::size_t>(big_n));
  std::iota(units.begin(), units.end(), Index{0});
  std::vector<Index> chosen;
  chosen.reserve(static_cast<std::size_t>(n));
  // Selection sampling: every size-n subset equally likely, output ascending.
  std::sample(units.begin(), units.end(), std::back_inserter(chosen), n, rng);
  return SampleState{std::move(chosen), {}, DesignProbs::srswor(big_n, n), std::nullopt};
}

SampleState poisson_response(const Population& pop, SampleState state, RngStream& rng) {
  if (!pop.true_resp_prob()) {
    throw ConfigurationError("population has no response probabilities; cannot simulate nonresponse");
  }
  const Vector& p = *pop.true_resp_prob();
  state.respondents.clear();
  for (Index unit : state.sample) {
    // One uniform per sampled unit, always drawn, so the stream position does
    // not depend on earlier outcomes.
    const double u = rng.uniform();
    if (u < p[unit]) state.respondents.push_back(unit);
  }
  state.est_resp_prob.reset();
  return state;
}

// -------------------------------------------------------------------------
// Two-phase design
// -------------------------------------------------------------------------

TwoPhaseProbs::TwoPhaseProbs(DesignProbs design, Vector resp_prob)
    : design_(std::move(design)), p_(std::move(resp_prob)) {}

double TwoPhaseProbs::star_joint(Index k, Index l) const {
  if (k == l) return star_first(k);
  return design_.joint(k, l) * p_[k] * p_[l];
}

double TwoPhaseProbs::star_delta(Index k, Index l) const {
  if (k == l) {
    const double s = star_first(k);
    return s * (1.0 - s);
  }
  return design_.delta(k, l) * p_[k] * p_[l];
}

Vector TwoPhaseProbs::star_first() const {
  Vector out = design_.first_order();
  return out.cwiseProduct(p_);
}

Matrix TwoPhaseProbs::star_second() const {
  const Index n = design_.population_size();
  if (n > DesignProbs::kMaxDense) throw DomainError("refusing to materialize two-phase design");
  Matrix out(n, n);
  for (Index k = 0; k < n; ++k) {
    for (Index l = 0; l < n; ++l) out(k, l) = star_joint(k, l);
  }
  return out;
}

Matrix TwoPhaseProbs::star_delta() const {
  const Index n = design_.population_size();
  if (n > DesignProbs::kMaxDense) throw DomainError("refusing to materialize two-phase design");
  Matrix out(n, n);
  for (Index k = 0; k < n; ++k) {
    for (Index l = 0; l < n; ++l) out(k, l) = star_delta(k, l);
  }
  return out;
}

TwoPhaseProbs two_phase_probs(const DesignProbs& design, const Vector& p) {
  if (p.size() != design.population_size()) {
    throw DimensionError("response probability vector has " + std::to_string(p.size()) +
                         " entries, design covers " + std::to_string(design.population_size()) + " units");
  }
  for (Index k = 0; k < p.size(); ++k) {
    if (!(p[k] > 0.0 && p[k] <= 1.0)) throw DomainError("response probability outside (0, 1]");
  }
  return TwoPhaseProbs(design, p);
}

}  // namespace nwa
