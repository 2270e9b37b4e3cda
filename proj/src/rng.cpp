#include "hidlr/rng.hpp"

#include <cmath>
#include <numeric>

#include "hidlr/errors.hpp"

namespace hidlr {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_.s) word = splitmix64(sm);
}

Rng Rng::for_stream(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t mix = stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL;
    const std::uint64_t tag = splitmix64(mix);
    return Rng(seed ^ tag);
}

std::uint64_t Rng::next_u64() {
    auto& s = state_.s;
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
    const double x = lo + (hi - lo) * uniform();
    return x < hi ? x : std::nextafter(hi, lo);
}

double Rng::normal() {
    if (state_.has_spare) {
        state_.has_spare = false;
        return state_.spare;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    state_.spare = v * scale;
    state_.has_spare = true;
    return u * scale;
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw ValidationError("Rng::below: empty range");
    const std::uint64_t bound = n;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % bound);
}

Vec rng_normal(Rng& rng, std::size_t n) {
    Vec out(n);
    for (auto& x : out) x = rng.normal();
    return out;
}

Vec rng_uniform(Rng& rng, std::size_t n, double lo, double hi) {
    if (!(lo < hi)) throw ValidationError("rng_uniform: need lo < hi");
    Vec out(n);
    for (auto& x : out) x = rng.uniform(lo, hi);
    return out;
}

std::vector<std::size_t> rng_permutation(Rng& rng, std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace hidlr
