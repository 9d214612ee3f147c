#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace opfcert {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named sub-stream ("data", "init", "attack", ...)
/// from the master seed. Stable across platforms and runs.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

/// Same as derive_seed but additionally keyed by an integer (epoch, restart, ...).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index);

inline Rng make_rng(std::uint64_t master, std::string_view stream) {
    return Rng(derive_seed(master, stream));
}

}  // namespace opfcert
