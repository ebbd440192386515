#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <string_view>

namespace cvgl {

/// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(std::string_view bytes);

/// Stable, portable 64-bit hash (FNV-1a with a splitmix64 finalizer).
/// Used to fan a single top-level seed out to per-(query, candidate, pair)
/// draws; not cryptographic.
std::uint64_t stable_hash64(std::string_view bytes);

/// Combines a seed with string parts into one stable 64-bit value.
std::uint64_t stable_hash64(std::uint64_t seed,
                            std::initializer_list<std::string_view> parts);

/// Maps a 64-bit hash to [0, 1).
double unit_interval(std::uint64_t h);

/// Deterministic standard-normal draw from a hash (Box-Muller; portable,
/// unlike std::normal_distribution).
double standard_normal(std::uint64_t h);

std::string base64_encode(std::string_view bytes);

}  // namespace cvgl
