#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace xtransfer {

// Seeded generator with distribution mappings defined here rather than by the
// standard library, so sequences are identical across toolchains. The engine
// state is serializable for checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n), n > 0, without modulo bias.
  std::uint64_t below(std::uint64_t n);
  double normal();

  std::string state() const;
  void set_state(const std::string& s);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[static_cast<std::size_t>(below(i))]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Mix a base seed with a stream index into an independent seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace xtransfer
