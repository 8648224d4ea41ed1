#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>

namespace nptrack {

// Wrap an angle to (-pi, pi].
inline double wrap_pi(double angle) {
    double w = std::remainder(angle, 2.0 * M_PI);
    if (w <= -M_PI) w += 2.0 * M_PI;
    return w;
}

// Run fn(i) for i in [0, n) on up to `workers` threads (0 = hardware default).
// Results must be written to per-index slots; no ordering is guaranteed.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

// Shortest-precision decimal that round-trips the double (used for
// byte-reproducible CSV and config output).
std::string format_double(double value);

} // namespace nptrack
