#pragma once

#include <cstdint>

namespace jbsde {

// Stateless counter-based random stream: draw i is a 64-bit hash of
// (key, i), where the key is derived from (seed, stream, substream).
// Streams never share state, so paths can be generated concurrently and
// results do not depend on thread count or generation order.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream = 0);

    std::uint64_t next_u64();
    // uniform on (0,1), never returns an endpoint
    double next_double();
    // standard normal via inverse-CDF transform of next_double()
    double next_normal();

    void skip(std::uint64_t n) { counter_ += n; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_ = 0;
    std::uint64_t counter_ = 0;
};

// Acklam's rational approximation with one Halley polish step; relative
// error is at the 1e-15 level over (0,1).
double inverse_normal_cdf(double p);

// stream tags used across the project so sub-experiments draw from
// provably disjoint randomness
namespace streams {
inline constexpr std::uint64_t brownian = 0x42726f776eULL;
inline constexpr std::uint64_t jumps = 0x4a756d7073ULL;
inline constexpr std::uint64_t validation = 0x56616c6964ULL;
inline constexpr std::uint64_t residual = 0x5265736964ULL;
inline constexpr std::uint64_t probes = 0x50726f6265ULL;
}  // namespace streams

}  // namespace jbsde
