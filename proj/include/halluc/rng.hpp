#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "halluc/errors.hpp"

namespace halluc {

// Stream roles used when deriving child seeds. Keeping the roles distinct
// means enabling or disabling one consumer (say, base-batch sampling) cannot
// perturb the draws seen by another.
enum class StreamTag : uint64_t {
  generator = 1,
  episode = 2,
  model_init = 3,
  pretrain_shuffle = 4,
  finetune_support = 5,
  finetune_base = 6,
  base_subsample = 7,
  head_init = 8,
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Order-sensitive combine of seed words into one stream seed.
inline uint64_t mix_seed(std::initializer_list<uint64_t> words) {
  uint64_t h = 0x243f6a8885a308d3ull;
  for (uint64_t w : words) h = splitmix64(h ^ w);
  return h;
}

inline uint64_t derive_seed(uint64_t seed, StreamTag tag, uint64_t index = 0) {
  return mix_seed({seed, static_cast<uint64_t>(tag), index});
}

// Deterministic random stream. The distribution code is hand-rolled on top
// of mt19937_64 so draws are bit-identical across standard libraries.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : eng_(seed) {}
  RngStream(uint64_t seed, StreamTag tag, uint64_t index = 0)
      : eng_(derive_seed(seed, tag, index)) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with cached spare.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  // Uniform integer in [0, n) by rejection, bias-free.
  int uniform_int(int n) {
    if (n <= 0) throw ContractError("RngStream::uniform_int: n must be positive");
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return static_cast<int>(x % un);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), in draw order (partial Fisher-Yates).
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw ContractError("sample_without_replacement: k > n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
      const int j = i + uniform_int(n - i);
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << eng_;
    if (has_spare_)
      os << " 1 " << spare_bits();
    else
      os << " 0 0";
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> eng_;
    int flag = 0;
    uint64_t bits = 0;
    is >> flag >> bits;
    if (!is) throw DataError("RngStream: malformed serialized state");
    has_spare_ = (flag == 1);
    if (has_spare_) {
      double v;
      static_assert(sizeof(v) == sizeof(bits));
      std::memcpy(&v, &bits, sizeof(v));
      spare_ = v;
    }
  }

 private:
  uint64_t spare_bits() const {
    uint64_t bits;
    std::memcpy(&bits, &spare_, sizeof(bits));
    return bits;
  }

  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace halluc
