#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "nwa/linalg.hpp"

namespace nwa {

// A finite population U = {0, ..., N-1}. Immutable once built; safe to share
// across threads for reading.
class Population {
 public:
  // Throws DimensionError on mismatched sizes and DomainError when a response
  // probability falls outside (0, 1].
  Population(Matrix aux, Vector outcome, std::optional<Vector> true_resp_prob = std::nullopt);

  Index n_units() const noexcept { return outcome_.size(); }
  Index n_aux() const noexcept { return aux_.cols(); }
  const Matrix& aux() const noexcept { return aux_; }
  const Vector& outcome() const noexcept { return outcome_; }
  const std::optional<Vector>& true_resp_prob() const noexcept { return true_resp_prob_; }
  double total() const noexcept { return total_; }

  // Population totals of every auxiliary column.
  Vector aux_totals() const;

 private:
  Matrix aux_;
  Vector outcome_;
  std::optional<Vector> true_resp_prob_;
  double total_;
};

// Column layout of generated populations.
namespace simulation_column {
inline constexpr Index kX1 = 0;
inline constexpr Index kX2 = 1;
inline constexpr Index kX3 = 2;
inline constexpr Index kX4 = 3;
}  // namespace simulation_column

// Parameters of the synthetic simulation population.
//
//   x1 ~ Normal(1, x1_variance)
//   x2 ~ 0.5 Normal(6, 0.25) + 0.5 Normal(10, 0.25)
//   x3 ~ Gamma(shape 2, rate 3)
//   x4 ~ 0.5 Normal(2, 16) + 0.5 Gamma(shape 3, rate 3)
//   y  = 6 x1 + 4 x2 + cos(x3) + sqrt(|x4 - mean(x4)|) + Normal(0, 1)
//   p  = logistic(lambda_resp[0] x1 + lambda_resp[1] x2)
//
// The default x1 variance is 2.25. With variance 0.25 the x1 signal is too
// weak for y to track the response probability (corr(y, p) turns negative);
// `narrow_x1` builds that variant.
struct PopulationSpec {
  std::uint64_t seed = 0;
  Index n_units = 1000;
  std::array<double, 2> lambda_resp{0.46, -0.06};
  double x1_variance = 2.25;

  static PopulationSpec narrow_x1(std::uint64_t seed, Index n_units = 1000);
};

// Throws DomainError when spec.n_units < 2.
Population generate_population(const PopulationSpec& spec);

struct UnitRecord {
  std::vector<double> aux;
  double outcome = 0.0;
};

// Builds a population without response probabilities. Throws DimensionError
// on an empty list or ragged auxiliary vectors.
Population population_from_records(std::span<const UnitRecord> rows);

}  // namespace nwa
