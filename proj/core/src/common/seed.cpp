#include "svtc/common/seed.hpp"

#include <cmath>

namespace svtc {

double standard_normal(Rng& rng) {
    double u, v, s;
    do {
        u = 2.0 * uniform01(rng) - 1.0;
        v = 2.0 * uniform01(rng) - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    // Only one of the pair is returned so each call consumes a fixed pattern
    // of engine draws regardless of call history.
    return u * std::sqrt(-2.0 * std::log(s) / s);
}

} // namespace svtc
