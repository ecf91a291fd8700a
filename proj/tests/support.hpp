#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "nwa/design.hpp"
#include "nwa/linalg.hpp"
#include "nwa/population.hpp"
#include "nwa/rng.hpp"

namespace nwa::testing {

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

inline Index uniform_int(RngStream& rng, Index lo, Index hi) {
  return lo + static_cast<Index>(rng.uniform() * static_cast<double>(hi - lo + 1)) % (hi - lo + 1);
}

// Random population with `p` positive-ish auxiliaries, a noisy nonlinear
// outcome, and response probabilities in [0.3, 0.95].
inline Population random_population(RngStream& rng, Index n_units, Index p) {
  Matrix aux(n_units, p);
  Vector y(n_units);
  Vector resp(n_units);
  for (Index k = 0; k < n_units; ++k) {
    double lin = 0.0;
    for (Index j = 0; j < p; ++j) {
      aux(k, j) = 1.0 + 3.0 * rng.uniform() + static_cast<double>(j);
      lin += (j % 2 == 0 ? 2.0 : -1.0) * aux(k, j);
    }
    y[k] = 10.0 + lin + std::sin(aux(k, 0)) + rng.normal(0.0, 1.0);
    resp[k] = 0.3 + 0.65 * rng.uniform();
  }
  return Population(aux, y, resp);
}

struct Instance {
  Population pop;
  SampleState state;
  Vector y_sr;
  Matrix aux_sr;
  Vector p_sr;
};

// SRSWOR sample with Poisson response, redrawn until at least `min_resp`
// units respond.
inline Instance random_instance(RngStream& rng, Index n_units, Index n, Index p, Index min_resp) {
  Population pop = random_population(rng, n_units, p);
  for (;;) {
    SampleState s = poisson_response(pop, srswor_sample(pop, n, rng), rng);
    if (s.n_r() < min_resp) continue;
    Vector y_sr = select(pop.outcome(), s.respondents);
    Matrix aux_sr = select_rows(pop.aux(), s.respondents);
    Vector p_sr = select(*pop.true_resp_prob(), s.respondents);
    return Instance{std::move(pop), std::move(s), std::move(y_sr), std::move(aux_sr), std::move(p_sr)};
  }
}

// All size-n subsets of {0..N-1}, ascending.
inline std::vector<std::vector<Index>> subsets_of_size(Index big_n, Index n) {
  std::vector<std::vector<Index>> out;
  std::vector<bool> mask(static_cast<std::size_t>(big_n), false);
  std::fill(mask.begin(), mask.begin() + n, true);
  do {
    std::vector<Index> s;
    for (Index k = 0; k < big_n; ++k) {
      if (mask[static_cast<std::size_t>(k)]) s.push_back(k);
    }
    out.push_back(std::move(s));
  } while (std::prev_permutation(mask.begin(), mask.end()));
  return out;
}

}  // namespace nwa::testing
