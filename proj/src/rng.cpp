#include "ztrans/rng.hpp"

#include <cmath>

namespace ztrans {

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
    Rng r(a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL);
    return r.next_u64();
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) { return mix_seed(mix_seed(a, b), c); }

}  // namespace ztrans
