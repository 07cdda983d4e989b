#pragma once

#include <cmath>
#include <cstdint>

namespace pipebench {

// SplitMix64. Used everywhere instead of <random> distributions so that
// streams are identical across platforms and standard-library versions.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    double normal() {
        // Box-Muller, one value per call; cheap enough for init work.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(T* a, size_t n) {
        for (size_t i = n; i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            T tmp = a[i - 1];
            a[i - 1] = a[j];
            a[j] = tmp;
        }
    }

  private:
    uint64_t state_;
};

// Independent per-index stream: the sample at `index` is the same no matter
// in which order (or on which thread) it is generated.
inline Rng derive_stream(uint64_t seed, uint64_t index) {
    Rng mixer(index * 0xD1342543DE82EF95ULL + 0x63D15E1FC2C9F1E1ULL);
    uint64_t salt = mixer.next_u64();
    Rng stream(seed ^ salt);
    stream.next_u64();  // decorrelate nearby seeds
    return Rng(stream.next_u64());
}

}  // namespace pipebench
