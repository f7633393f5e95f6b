#pragma once

#include <cstdint>

namespace nirpf {

/// Counter-based random stream. Draw k of (seed, stream_id) is a pure function
/// of those three integers, so distinct streams can be consumed from
/// different threads without affecting each other's output.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id) noexcept;

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t position() const noexcept { return position_; }

    /// Raw 64 bits at an explicit draw index; does not advance the stream.
    std::uint64_t bits_at(std::uint64_t index) const noexcept;
    /// Uniform in [0,1) at an explicit draw index.
    double unit_at(std::uint64_t index) const noexcept;

    std::uint64_t next_bits() noexcept { return bits_at(position_++); }
    double next_unit() noexcept { return unit_at(position_++); }

    /// Uniform in [lo, hi); returns lo when lo == hi. Throws InvalidRange if lo > hi.
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller (consumes two draws).
    double normal();

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t key_ = 0;
    std::uint64_t position_ = 0;
};

/// Stateless draw, the form used by the determinism contract.
double rng_draw_uniform(const RngStream& stream, std::uint64_t index, double lo, double hi);

}  // namespace nirpf
