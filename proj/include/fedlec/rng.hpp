#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedlec {

/// SplitMix64 step; mutates the state and returns the next value.
std::uint64_t splitmix64(std::uint64_t& state);

/// Folds a list of values into one 64-bit seed. Used everywhere a stream
/// must be keyed by (experiment seed, round, client, purpose).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// Stream purpose tags for mix_seed. Fixed constants: changing them changes
// every derived stream.
namespace seed_tag {
inline constexpr std::uint64_t kPartition = 1;
inline constexpr std::uint64_t kModelInit = 2;
inline constexpr std::uint64_t kBlobTrain = 3;
inline constexpr std::uint64_t kBlobTest = 4;
inline constexpr std::uint64_t kClientSampling = 5;
inline constexpr std::uint64_t kLocalShuffle = 6;
}  // namespace seed_tag

/// Deterministic random stream. The engine is mt19937_64 (sequence fixed by
/// the standard); all distribution transforms are implemented here rather
/// than with std:: distributions, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform();

    double uniform(double lo, double hi);

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Standard normal via Box-Muller.
    double normal();

    /// Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled by boosting.
    double gamma(double alpha);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace fedlec
