#pragma once

#include <cstdint>
#include <random>

namespace srae {

/// Counter-based RNG state: every draw sequence is derived from (seed, counter),
/// so the full state serializes as two integers.
struct RngState {
    std::uint64_t seed = 0;
    std::uint64_t counter = 0;

    friend bool operator==(const RngState&, const RngState&) = default;
};

/// Engine for the draw sequence identified by `state` and a stream tag that
/// separates independent consumers (batch sampling, noise, initialization).
std::mt19937_64 make_engine(const RngState& state, std::uint64_t stream);

}  // namespace srae
