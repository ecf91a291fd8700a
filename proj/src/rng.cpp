#include "nwa/rng.hpp"

namespace nwa {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t key, std::uint64_t label) {
  return splitmix64(key ^ splitmix64(label ^ 0x6a09e667f3bcc909ULL));
}

std::mt19937_64 seeded_engine(std::uint64_t key) {
  const std::uint64_t k2 = splitmix64(key);
  std::seed_seq seq{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32),
                    static_cast<std::uint32_t>(k2), static_cast<std::uint32_t>(k2 >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> path)
    : key_(splitmix64(seed)) {
  for (std::uint64_t label : path) key_ = derive(key_, label);
  engine_ = seeded_engine(key_);
}

RngStream::RngStream(FromKey, std::uint64_t key) : key_(key), engine_(seeded_engine(key)) {}

RngStream RngStream::child(std::uint64_t label) const { return RngStream(FromKey{}, derive(key_, label)); }

}  // namespace nwa
