#include "nwa/population.hpp"

#include <cmath>
#include <string>

#include "nwa/errors.hpp"
#include "nwa/rng.hpp"

namespace nwa {

Population::Population(Matrix aux, Vector outcome, std::optional<Vector> true_resp_prob)
    : aux_(std::move(aux)), outcome_(std::move(outcome)), true_resp_prob_(std::move(true_resp_prob)) {
  if (outcome_.size() == 0) throw DimensionError("population must contain at least one unit");
  if (aux_.rows() != outcome_.size()) {
    throw DimensionError("auxiliary matrix has " + std::to_string(aux_.rows()) + " rows but outcome has " +
                         std::to_string(outcome_.size()) + " entries");
  }
  if (true_resp_prob_) {
    if (true_resp_prob_->size() != outcome_.size()) {
      throw DimensionError("response probability vector length differs from population size");
    }
    for (Index k = 0; k < true_resp_prob_->size(); ++k) {
      const double p = (*true_resp_prob_)[k];
      if (!(p > 0.0 && p <= 1.0)) {
        throw DomainError("response probability of unit " + std::to_string(k) + " is outside (0, 1]");
      }
    }
  }
  total_ = compensated_sum(outcome_);
}

Vector Population::aux_totals() const { return compensated_colwise_sum(aux_); }

PopulationSpec PopulationSpec::narrow_x1(std::uint64_t seed, Index n_units) {
  PopulationSpec spec;
  spec.seed = seed;
  spec.n_units = n_units;
  spec.x1_variance = 0.25;
  return spec;
}

Population generate_population(const PopulationSpec& spec) {
  if (spec.n_units < 2) throw DomainError("population needs at least two units");
  if (!(spec.x1_variance > 0.0)) throw DomainError("x1 variance must be positive");

  const Index n = spec.n_units;
  RngStream base(spec.seed, {stream_label::kPopulation});
  // One stream per generated quantity so changing one distribution does not
  // shift the draws of the others.
  RngStream s1 = base.child(1), s2 = base.child(2), s3 = base.child(3), s4 = base.child(4),
            s_eps = base.child(5);

  Matrix aux(n, 4);
  for (Index k = 0; k < n; ++k) {
    aux(k, simulation_column::kX1) = s1.normal(1.0, spec.x1_variance);

    const bool low = s2.bernoulli(0.5);
    aux(k, simulation_column::kX2) = s2.normal(low ? 6.0 : 10.0, 0.25);

    aux(k, simulation_column::kX3) = s3.gamma_shape_rate(2.0, 3.0);

    const bool gaussian = s4.bernoulli(0.5);
    aux(k, simulation_column::kX4) = gaussian ? s4.normal(2.0, 16.0) : s4.gamma_shape_rate(3.0, 3.0);
  }

  const double x4_mean = compensated_sum(aux.col(simulation_column::kX4)) / static_cast<double>(n);

  Vector y(n), p(n);
  for (Index k = 0; k < n; ++k) {
    const double x1 = aux(k, simulation_column::kX1);
    const double x2 = aux(k, simulation_column::kX2);
    const double x3 = aux(k, simulation_column::kX3);
    const double x4 = aux(k, simulation_column::kX4);
    y[k] = 6.0 * x1 + 4.0 * x2 + std::cos(x3) + std::sqrt(std::abs(x4 - x4_mean)) + s_eps.normal(0.0, 1.0);
    const double eta = spec.lambda_resp[0] * x1 + spec.lambda_resp[1] * x2;
    p[k] = 1.0 / (1.0 + std::exp(-eta));
  }
  return Population(std::move(aux), std::move(y), std::move(p));
}

Population population_from_records(std::span<const UnitRecord> rows) {
  if (rows.empty()) throw DimensionError("no records supplied");
  const std::size_t width = rows.front().aux.size();
  Matrix aux(static_cast<Index>(rows.size()), static_cast<Index>(width));
  Vector y(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].aux.size() != width) {
      throw DimensionError("record " + std::to_string(i) + " has " + std::to_string(rows[i].aux.size()) +
                           " auxiliary values, expected " + std::to_string(width));
    }
    for (std::size_t j = 0; j < width; ++j) aux(static_cast<Index>(i), static_cast<Index>(j)) = rows[i].aux[j];
    y[static_cast<Index>(i)] = rows[i].outcome;
  }
  return Population(std::move(aux), std::move(y));
}

}  // namespace nwa
