#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xvqa {

// SplitMix64. Used for every seeded stream so that outputs are identical
// across standard library implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  uint64_t below(uint64_t n);

  // Uniform integer in [lo, hi].
  int64_t between(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo) + 1));
  }

  double normal();

 private:
  uint64_t state_;
};

uint64_t fnv1a64(std::string_view bytes);
uint64_t mix_seed(uint64_t a, uint64_t b);
std::string hex64(uint64_t v);

template <typename T>
void shuffle_in_place(std::vector<T>& v, SplitMix64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

// Lowercased whitespace tokenization; strips leading/trailing punctuation
// except apostrophes inside a word.
std::vector<std::string> tokenize(std::string_view text);
std::string join(std::span<const std::string> tokens, std::string_view sep = " ");

std::string base64_encode(std::span<const uint8_t> bytes);
std::vector<uint8_t> base64_decode(std::string_view text);

uint16_t float_to_half(float value);
float half_to_float(uint16_t half);

}  // namespace xvqa
