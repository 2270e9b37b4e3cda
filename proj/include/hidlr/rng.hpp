#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "hidlr/core_math.hpp"

namespace hidlr {

// xoshiro256** seeded through splitmix64. The integer and uniform streams are
// pinned bit-for-bit; normals use the Marsaglia polar method on top of them.
class Rng {
public:
    struct State {
        std::array<std::uint64_t, 4> s{};
        bool has_spare = false;
        double spare = 0.0;

        bool operator==(const State&) const = default;
    };

    explicit Rng(std::uint64_t seed);

    // Independent generator for a named purpose (data, init, batching...).
    static Rng for_stream(std::uint64_t seed, std::uint64_t stream);

    std::uint64_t next_u64();
    double uniform();                       // [0, 1), 53-bit resolution
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();
    std::size_t below(std::size_t n);       // uniform on {0, ..., n-1}, unbiased

    State state() const { return state_; }
    void restore(const State& st) { state_ = st; }

private:
    State state_;
};

Vec rng_normal(Rng& rng, std::size_t n);
Vec rng_uniform(Rng& rng, std::size_t n, double lo, double hi);

// Fisher-Yates permutation of {0, ..., n-1}.
std::vector<std::size_t> rng_permutation(Rng& rng, std::size_t n);

}  // namespace hidlr
