#pragma once

#include <array>
#include <cstdint>

namespace nptrack {

// Counter-based random numbers (Philox 4x32-10, Salmon et al. 2011).
// Every draw is a pure function of (seed, counter), so parallel consumers
// get identical streams no matter how work is scheduled across threads.

// Domain tags keep independent consumers on disjoint streams.
enum class RngDomain : std::uint32_t {
    control_sampling = 0,
    plant_noise = 1,
    excitation = 2,
    kmeans = 3,
    test = 15,
};

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// Two doubles in the open interval (0,1) from one Philox block.
std::array<double, 2> counter_uniform2(std::uint64_t seed, RngDomain domain,
                                       std::uint32_t c0, std::uint32_t c1, std::uint32_t c2);

// Standard normal CDF and its inverse.
double normal_cdf(double x);
double normal_quantile(double p);

// Standard normal draw via inverse CDF on a (0,1) uniform.
inline double normal_from_uniform(double u) { return normal_quantile(u); }

// Truncated-normal draw by 1-D inverse-CDF transform: exact, no rejection.
// `u` is a (0,1) uniform; parent distribution N(mu, sigma^2) truncated to [lo, hi].
double truncnorm_from_uniform(double u, double mu, double sigma, double lo, double hi);

} // namespace nptrack
