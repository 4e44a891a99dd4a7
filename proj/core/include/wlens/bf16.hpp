#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

#include "wlens/errors.hpp"

namespace wlens {

// bfloat16 storage word: 1 sign bit, 8 exponent bits, 7 mantissa bits.
// Same exponent range and bias (127) as binary32; conversions are the
// upper half of the float bit pattern.
class Bf16 {
public:
    constexpr Bf16() = default;

    static constexpr Bf16 from_bits(std::uint16_t b) { return Bf16(b); }

    // Round-to-nearest-even quantization of a binary32 value.
    static Bf16 from_float(float f) {
        std::uint32_t u = std::bit_cast<std::uint32_t>(f);
        const std::uint32_t exp = u & 0x7F800000u;
        const std::uint32_t mant = u & 0x007FFFFFu;
        if (exp == 0x7F800000u) {
            std::uint16_t top = static_cast<std::uint16_t>(u >> 16);
            if (mant != 0) top |= 0x0040u;  // keep NaNs quiet after truncation
            return Bf16(top);
        }
        const std::uint32_t lsb = (u >> 16) & 1u;
        u += 0x7FFFu + lsb;
        return Bf16(static_cast<std::uint16_t>(u >> 16));
    }

    static Bf16 from_double(double d) { return from_float(static_cast<float>(d)); }

    constexpr float to_float() const {
        return std::bit_cast<float>(static_cast<std::uint32_t>(bits_) << 16);
    }
    constexpr double to_double() const { return static_cast<double>(to_float()); }
    constexpr std::uint16_t bits() const { return bits_; }

    constexpr std::uint16_t sign_bit() const { return bits_ >> 15; }
    constexpr std::uint16_t exponent_field() const { return (bits_ >> 7) & 0xFFu; }
    constexpr std::uint16_t mantissa_field() const { return bits_ & 0x7Fu; }

    constexpr bool is_nan() const { return exponent_field() == 0xFF && mantissa_field() != 0; }
    constexpr bool is_inf() const { return exponent_field() == 0xFF && mantissa_field() == 0; }
    constexpr bool is_finite() const { return exponent_field() != 0xFF; }
    constexpr bool is_zero() const { return (bits_ & 0x7FFFu) == 0; }
    constexpr bool is_subnormal() const { return exponent_field() == 0 && mantissa_field() != 0; }
    // Finite, nonzero, exponent field >= 1.
    constexpr bool is_normalized() const { return exponent_field() >= 1 && exponent_field() <= 0xFE; }

    friend constexpr bool operator==(Bf16 a, Bf16 b) { return a.bits_ == b.bits_; }

private:
    constexpr explicit Bf16(std::uint16_t b) : bits_(b) {}
    std::uint16_t bits_ = 0;
};

// Spacing between adjacent representable bf16 values at the magnitude of x:
// 2^(e-7) for |x| in the binade [2^e, 2^(e+1)). Zero and subnormal inputs
// return the constant subnormal spacing 2^-133.
inline double ulp_bf16(Bf16 x) {
    if (!x.is_finite()) throw DomainError("ulp_bf16: input must be finite");
    const int ef = x.exponent_field();
    if (ef == 0) return std::ldexp(1.0, -133);
    return std::ldexp(1.0, ef - 127 - 7);
}

// Smallest additive step that can flip the stored code: half a ULP. Steps
// strictly below this round back to the same code under round-to-nearest-even.
inline double realization_threshold(Bf16 x) { return 0.5 * ulp_bf16(x); }

// How a pair of exact-zero codes is classified by the probe.
enum class ZeroPolicy {
    signed_zeros_equal,  // +0 and -0 count as unchanged (default)
    bitwise,             // +0 vs -0 counts as changed
};

struct ProbeConfig {
    // Relative tolerance of the unchanged test. Must stay below 2^-9 so the
    // test coincides with bit equality on normalized values; larger values
    // are rejected outright.
    double eta = 1e-3;
    ZeroPolicy zero_policy = ZeroPolicy::signed_zeros_equal;

    void validate() const {
        const double ceiling = std::ldexp(1.0, -9);
        if (!(eta > 0.0) || !(eta < ceiling))
            throw ConfigError("ProbeConfig: eta must lie in (0, 2^-9)");
    }
};

// Scale-aware unchanged test: |b - a| <= eta * max(|a|, |b|) on the decoded
// values. For normalized inputs and eta < 2^-9 this is equivalent to bit
// equality of the stored codes. NaNs compare changed against everything;
// subnormals fall through to the relative test, which classifies them
// changed exactly when their bit patterns differ.
inline bool bf16_unchanged(Bf16 w, Bf16 w_hat, const ProbeConfig& cfg = {}) {
    cfg.validate();
    if (w.is_nan() || w_hat.is_nan()) return false;
    if (w.bits() == w_hat.bits()) return true;
    if (cfg.zero_policy == ZeroPolicy::bitwise && w.is_zero() && w_hat.is_zero()) return false;
    if (!w.is_finite() || !w_hat.is_finite()) return false;
    const double a = w.to_double();
    const double b = w_hat.to_double();
    return std::abs(b - a) <= cfg.eta * std::max(std::abs(a), std::abs(b));
}

// The fixed absolute-tolerance rule used by earlier update-sparsity reports,
// kept for side-by-side comparison. Operates on raw (pre-quantization)
// values; |b - a| <= tol means "unchanged".
inline bool absolute_rule_unchanged(double a, double b, double tol = 1e-5) {
    if (std::isnan(a) || std::isnan(b)) return false;
    return std::abs(b - a) <= tol;
}

}  // namespace wlens
