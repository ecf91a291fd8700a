#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "nwa/linalg.hpp"

namespace nwa {

class Population;
class RngStream;

// First- and second-order inclusion probabilities of a first-phase design.
//
// SRSWOR (and the census, SRSWOR with n = N) is stored as its two constants
// and never materialized unless asked. Poisson designs store the first-order
// vector and use pi_kl = pi_k pi_l. Arbitrary designs store dense matrices.
class DesignProbs {
 public:
  struct Srswor {
    Index population_size;
    Index sample_size;
  };
  struct Poisson {
    Vector first_order;
  };
  struct Dense {
    Vector first_order;
    Matrix second_order;
  };

  static DesignProbs srswor(Index population_size, Index sample_size);
  static DesignProbs census(Index population_size) { return srswor(population_size, population_size); }
  static DesignProbs poisson(Vector first_order);
  // Validates symmetry, the range (0, 1], and diag == first_order.
  static DesignProbs dense(Vector first_order, Matrix second_order);

  Index population_size() const;
  double first(Index k) const;
  double joint(Index k, Index l) const;
  double delta(Index k, Index l) const { return joint(k, l) - first(k) * first(l); }

  // Non-null when the design is SRSWOR, enabling O(n) double sums.
  const Srswor* as_srswor() const { return std::get_if<Srswor>(&repr_); }

  // Dense first-order vector and pi_kl matrix. Only for N <= kMaxDense.
  Vector first_order() const;
  Matrix second_order() const;

  static constexpr Index kMaxDense = 5000;

 private:
  explicit DesignProbs(std::variant<Srswor, Poisson, Dense> repr) : repr_(std::move(repr)) {}
  std::variant<Srswor, Poisson, Dense> repr_;
};

// Sample s, respondent subset s_r (both ascending unit indices) and the design.
// Vectors documented as "over s" or "over s_r" follow the order of `sample` and
// `respondents` respectively.
struct SampleState {
  std::vector<Index> sample;
  std::vector<Index> respondents;
  DesignProbs design;
  std::optional<Vector> est_resp_prob;  // over s_r, set once a response model is fitted

  Index n() const noexcept { return static_cast<Index>(sample.size()); }
  Index n_r() const noexcept { return static_cast<Index>(respondents.size()); }

  // pi_k over s and over s_r.
  Vector pi_over_sample() const;
  Vector pi_over_respondents() const;

  // Position of every respondent inside `sample`.
  std::vector<Index> respondent_positions() const;
  // 0/1 response indicator over s.
  Eigen::VectorXi response_indicator() const;
  // Units of s that did not respond, ascending.
  std::vector<Index> nonrespondents() const;
};

// Simple random sample of size n without replacement; respondents left empty.
// Throws DomainError unless 1 <= n <= N.
SampleState srswor_sample(const Population& pop, Index n, RngStream& rng);

// Marks each sampled unit as respondent independently with probability p_k.
// Throws ConfigurationError when the population has no response probabilities.
SampleState poisson_response(const Population& pop, SampleState state, RngStream& rng);

// Inclusion probabilities of the composite design that selects s_r directly
// from U: pi*_k = pi_k p_k, pi*_kl = pi_kl p_k p_l (k != l).
class TwoPhaseProbs {
 public:
  TwoPhaseProbs(DesignProbs design, Vector resp_prob);

  double star_first(Index k) const { return design_.first(k) * p_[k]; }
  double star_joint(Index k, Index l) const;
  double star_delta(Index k, Index l) const;

  const DesignProbs& design() const noexcept { return design_; }
  const Vector& resp_prob() const noexcept { return p_; }

  // Dense forms (N <= DesignProbs::kMaxDense).
  Vector star_first() const;
  Matrix star_second() const;
  Matrix star_delta() const;

 private:
  DesignProbs design_;
  Vector p_;
};

// Throws DimensionError when p does not cover the population and DomainError
// when an entry is outside (0, 1].
TwoPhaseProbs two_phase_probs(const DesignProbs& design, const Vector& p);

}  // namespace nwa
