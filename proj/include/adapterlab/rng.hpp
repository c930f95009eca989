#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace adapterlab::core {

/// FNV-1a 64-bit hash, used for sub-stream derivation and config digests.
std::uint64_t fnv1a64(std::string_view s);

/// Deterministic 64-bit generator: xoshiro256++ seeded through splitmix64.
/// Every random draw in the library flows through this type. Unrelated
/// consumers (shuffling, dropout, masking, sampling) take their own stream
/// via fork(purpose) so adding a draw in one place never perturbs another.
/// Sequences are identical across platforms for a given seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0,1).
    double uniform();
    double uniform(double lo, double hi);

    /// Unbiased integer in [0,n), n > 0.
    std::int64_t uniform_int(std::int64_t n);

    bool bernoulli(double p);

    /// Standard normal via Box-Muller (the spare draw is cached).
    double normal();
    double normal(double mean, double stddev);

    /// Independent stream derived from this stream's root seed and a label.
    /// Independent of how much this stream has already been consumed.
    Rng fork(std::string_view purpose) const;

    std::uint64_t root_seed() const { return root_seed_; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
            std::int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    /// k distinct indices from [0,population), in draw order (partial Fisher-Yates).
    std::vector<std::int64_t> sample_without_replacement(std::int64_t population, std::int64_t k);

private:
    std::uint64_t root_seed_ = 0;
    std::array<std::uint64_t, 4> state_{};
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace adapterlab::core
