#pragma once

#include <cstdint>
#include <initializer_list>
#include <cmath>
#include <random>

namespace nwa {

// Reproducible random stream. Child streams are derived from a master seed
// and a path of 64-bit labels, so replicate i of a study draws the same numbers
// whether it runs first, last, or on another thread.
class RngStream {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit RngStream(std::uint64_t seed) : RngStream(seed, {}) {}
  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  // Independent stream labelled by `label` under this stream's seed path.
  RngStream child(std::uint64_t label) const;

  result_type operator()() { return engine_(); }
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal(double mean, double variance) {
    return std::normal_distribution<double>(mean, std::sqrt(variance))(engine_);
  }
  double gamma_shape_rate(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

 private:
  struct FromKey {};
  RngStream(FromKey, std::uint64_t key);

  std::uint64_t key_;
  std::mt19937_64 engine_;
};

// Stream labels used by the library so that population, sampling, and response
// draws never share a stream.
namespace stream_label {
inline constexpr std::uint64_t kPopulation = 0x504f50;  // "POP"
inline constexpr std::uint64_t kReplicate = 0x524550;   // "REP"
inline constexpr std::uint64_t kSample = 0x53414d;      // "SAM"
inline constexpr std::uint64_t kResponse = 0x524553;    // "RES"
}  // namespace stream_label

}  // namespace nwa
