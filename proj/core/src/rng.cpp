#include "srae/rng.hpp"

namespace srae {

std::mt19937_64 make_engine(const RngState& state, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(state.seed), static_cast<std::uint32_t>(state.seed >> 32),
                      static_cast<std::uint32_t>(state.counter), static_cast<std::uint32_t>(state.counter >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace srae
