#include "nirpf/rng.hpp"

#include <cmath>
#include <numbers>

#include "nirpf/error.hpp"

namespace nirpf {
namespace {

// SplitMix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept
    : seed_(seed),
      stream_id_(stream_id),
      key_(mix(seed + 0x9E3779B97F4A7C15ULL) ^ mix(stream_id * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL)) {}

std::uint64_t RngStream::bits_at(std::uint64_t index) const noexcept {
    return mix(key_ + mix(index + 0x632BE59BD9B4E019ULL));
}

double RngStream::unit_at(std::uint64_t index) const noexcept {
    // 53 high bits -> [0,1)
    return static_cast<double>(bits_at(index) >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw Error(ErrorCode::InvalidRange, "uniform draw needs lo <= hi");
    }
    const double u = next_unit();
    if (lo == hi) return lo;
    const double v = lo + (hi - lo) * u;
    // Rounding can land exactly on hi for wide intervals.
    return v < hi ? v : std::nextafter(hi, lo);
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw Error(ErrorCode::InvalidRange, "below(0)");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    for (;;) {
        const std::uint64_t b = next_bits();
        if (b < limit) return b % n;
    }
}

double RngStream::normal() {
    double u1 = next_unit();
    const double u2 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double rng_draw_uniform(const RngStream& stream, std::uint64_t index, double lo, double hi) {
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
        throw Error(ErrorCode::InvalidRange, "uniform draw needs lo <= hi");
    }
    if (lo == hi) return lo;
    const double v = lo + (hi - lo) * stream.unit_at(index);
    return v < hi ? v : std::nextafter(hi, lo);
}

}  // namespace nirpf
