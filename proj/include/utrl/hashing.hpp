#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace utrl {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// First 16 hex digits of the SHA-256, for ids that end up in filenames and logs.
std::string short_hash(std::string_view data);

/// Stable 64-bit seed derived from a base seed and a label. Used so that every
/// sampling request gets a seed that depends only on its position in the run.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

}  // namespace utrl
