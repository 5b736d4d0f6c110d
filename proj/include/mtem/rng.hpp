#pragma once

// Counter-based random number generation. Every normal draw is addressed by
// (seed, replicate, index, component), so any draw can be regenerated in
// isolation and results never depend on thread scheduling.

#include <cstdint>
#include <array>
#include <cmath>
#include <stdexcept>

namespace mtem {

// ============================================================
// Philox 4x32-10 block cipher
// ============================================================

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

} // namespace detail

using PhiloxCtr = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

inline PhiloxCtr philox4x32(PhiloxCtr ctr, PhiloxKey key) {
    using namespace detail;
    for (int round = 0; round < 10; ++round) {
        std::uint32_t hi0, lo0, hi1, lo1;
        mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
        mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
        ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    return ctr;
}

// ============================================================
// Inverse normal CDF (Wichura's rational approximations)
// ============================================================

// Accurate to ~1e-15 relative over (0,1); exact symmetry about 0.5.
inline double normal_inv(double u) {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("normal_inv: u outside (0,1)");
    const double p = u - 0.5;
    if (std::fabs(p) <= 0.425) {
        const double r = 0.180625 - p * p;
        const double num =
            (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                  6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
              1.3314166789178437745e+2) * r + 3.3871328727963666080e+0);
        const double den =
            (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                  3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
              4.2313330701600911252e+1) * r + 1.0);
        return p * num / den;
    }
    double r = (p < 0.0) ? u : 1.0 - u;
    r = std::sqrt(-std::log(r));
    double z;
    if (r <= 5.0) {
        r -= 1.6;
        const double num =
            (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                  2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
              4.63033784615654529590e+0) * r + 1.42343711074968357734e+0);
        const double den =
            (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                  1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
              2.05319162663775882187e+0) * r + 1.0);
        z = num / den;
    } else {
        r -= 5.0;
        const double num =
            (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                  1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
              5.46378491116411436990e+0) * r + 6.65790464350110377720e+0);
        const double den =
            (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                  1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
              5.99832206555887937690e-1) * r + 1.0);
        z = num / den;
    }
    return (p < 0.0) ? -z : z;
}

// ============================================================
// Addressed draws
// ============================================================

namespace detail {

// Domain tag keeps path increments and generic sampling streams from ever
// sharing a counter block.
inline constexpr std::uint32_t kStreamDomain = 0x80000000u;

inline PhiloxKey seed_key(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

inline double counter_to_uniform(const PhiloxCtr& out) {
    const std::uint64_t bits =
        (static_cast<std::uint64_t>(out[1]) << 32) | static_cast<std::uint64_t>(out[0]);
    // 53-bit mantissa, offset by half an ulp so the result is strictly inside (0,1)
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

} // namespace detail

// Uniform in (0,1) for path increment (seed, replicate, index, component).
inline double path_uniform(std::uint64_t seed, std::uint64_t replicate,
                           std::uint64_t index, std::uint32_t component) {
    const PhiloxCtr ctr = {static_cast<std::uint32_t>(index),
                           static_cast<std::uint32_t>(index >> 32),
                           static_cast<std::uint32_t>(replicate),
                           component};
    return detail::counter_to_uniform(philox4x32(ctr, detail::seed_key(seed)));
}

inline double path_normal(std::uint64_t seed, std::uint64_t replicate,
                          std::uint64_t index, std::uint32_t component) {
    return normal_inv(path_uniform(seed, replicate, index, component));
}

// Sequential sampling stream for condition checks and property tests.
class SampleStream {
public:
    SampleStream(std::uint64_t seed, std::uint32_t stream_id = 0)
        : key_(detail::seed_key(seed)), stream_(stream_id), index_(0) {}

    double uniform() {
        const PhiloxCtr ctr = {static_cast<std::uint32_t>(index_),
                               static_cast<std::uint32_t>(index_ >> 32),
                               stream_,
                               detail::kStreamDomain};
        ++index_;
        return detail::counter_to_uniform(philox4x32(ctr, key_));
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() { return normal_inv(uniform()); }

private:
    PhiloxKey key_;
    std::uint32_t stream_;
    std::uint64_t index_;
};

} // namespace mtem
