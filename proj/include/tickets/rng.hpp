#pragma once

#include <cstdint>
#include <random>

namespace tickets {

using Engine = std::mt19937_64;

// Independent random streams derived from one master seed. Each consumer
// owns a stream id, so changing how one stream is used (e.g. turning on
// augmentation) never perturbs the draws of another.
enum class Stream : std::uint64_t {
    init = 1,
    shuffle = 2,
    augment = 3,
    train = 4,
    split = 5,
    subsample = 6,
    synthetic_pattern = 7,
    synthetic_noise = 8,
    random_prune = 9,
    relabel = 10,
};

std::uint64_t splitmix64(std::uint64_t x);

std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0);

inline Engine make_engine(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
    return Engine(derive_seed(master, stream, index));
}

} // namespace tickets
