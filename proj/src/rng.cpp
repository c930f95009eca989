#include "adapterlab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace adapterlab::core {

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

} // namespace

Rng::Rng(std::uint64_t seed) : root_seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
    // xoshiro256++
    std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

std::int64_t Rng::uniform_int(std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    std::uint64_t bound = static_cast<std::uint64_t>(n);
    std::uint64_t threshold = (-bound) % bound;
    for (;;) {
        std::uint64_t r = next_u64();
        if (r >= threshold) return static_cast<std::int64_t>(r % bound);
    }
}

bool Rng::bernoulli(double p) {
    return uniform() < p;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // keep log() away from 0
    double r = std::sqrt(-2.0 * std::log1p(-u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

double Rng::normal(double mean, double stddev) {
    return mean + stddev * normal();
}

Rng Rng::fork(std::string_view purpose) const {
    std::uint64_t mix = root_seed_ ^ rotl(fnv1a64(purpose), 17);
    return Rng(mix);
}

std::vector<std::int64_t> Rng::sample_without_replacement(std::int64_t population, std::int64_t k) {
    if (k < 0 || k > population)
        throw std::invalid_argument("Rng::sample_without_replacement: k out of range");
    std::vector<std::int64_t> pool(static_cast<std::size_t>(population));
    for (std::int64_t i = 0; i < population; ++i) pool[static_cast<std::size_t>(i)] = i;
    std::vector<std::int64_t> out;
    out.reserve(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < k; ++i) {
        std::int64_t j = i + uniform_int(population - i);
        std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
        out.push_back(pool[static_cast<std::size_t>(i)]);
    }
    return out;
}

} // namespace adapterlab::core
