#include "nptrack/rng.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/normal.hpp>

namespace nptrack {

namespace {

constexpr std::uint32_t kPhiloxW32A = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW32B = 0xBB67AE85u;
constexpr std::uint32_t kPhiloxM4x32A = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM4x32B = 0xCD9E8D57u;

inline void philox_round(std::array<std::uint32_t, 4>& ctr, std::array<std::uint32_t, 2>& key) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM4x32A) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM4x32B) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW32A;
    key[1] += kPhiloxW32B;
}

inline double u64_to_open_unit(std::uint64_t x) {
    // 53 significant bits, shifted into (0,1) so the inverse CDF never sees 0 or 1.
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

} // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
        philox_round(counter, key);
    }
    return counter;
}

std::array<double, 2> counter_uniform2(std::uint64_t seed, RngDomain domain,
                                       std::uint32_t c0, std::uint32_t c1, std::uint32_t c2) {
    const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed),
                                              static_cast<std::uint32_t>(seed >> 32)};
    const std::array<std::uint32_t, 4> ctr = {c0, c1, c2, static_cast<std::uint32_t>(domain)};
    const auto r = philox4x32(ctr, key);
    const std::uint64_t a = (static_cast<std::uint64_t>(r[0]) << 32) | r[1];
    const std::uint64_t b = (static_cast<std::uint64_t>(r[2]) << 32) | r[3];
    return {u64_to_open_unit(a), u64_to_open_unit(b)};
}

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x * 0.7071067811865475244);
}

double normal_quantile(double p) {
    static const boost::math::normal_distribution<double> unit{};
    return boost::math::quantile(unit, p);
}

double truncnorm_from_uniform(double u, double mu, double sigma, double lo, double hi) {
    if (!(sigma > 0.0)) {
        return std::clamp(mu, lo, hi);
    }
    const double fa = normal_cdf((lo - mu) / sigma);
    const double fb = normal_cdf((hi - mu) / sigma);
    const double p = fa + u * (fb - fa);
    if (p <= 0.0) return lo;
    if (p >= 1.0) return hi;
    return std::clamp(mu + sigma * normal_quantile(p), lo, hi);
}

} // namespace nptrack
