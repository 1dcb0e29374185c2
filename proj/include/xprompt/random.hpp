#ifndef XPROMPT_RANDOM_HPP
#define XPROMPT_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace xprompt {

/// Derives an independent child seed from a base seed and a stream name.
/// Used so that masking, initialization and shuffling draw from separate
/// streams that can be reproduced in isolation.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                          std::uint64_t a = 0, std::uint64_t b = 0);

std::uint64_t hash_string(std::string_view text);

/// Portable RNG: the engine is fully specified by the standard, and the
/// distributions below are implemented here so draws do not depend on the
/// standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, bound).
  std::uint64_t uniform_index(std::uint64_t bound);
  /// Uniform real in [0, 1).
  double uniform01();
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace xprompt

#endif  // XPROMPT_RANDOM_HPP
