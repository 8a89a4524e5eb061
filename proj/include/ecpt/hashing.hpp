#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ecpt {

/// 64-bit FNV-1a. Stable across platforms; used for exclusion keys, prompt
/// fingerprints, projection identities and the test embedder buckets.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex16(std::uint64_t value);
std::uint64_t from_hex16(std::string_view text);

/// Trim and collapse internal whitespace runs to one space.
std::string collapse_whitespace(std::string_view text);

std::string trim(std::string_view text);

}  // namespace ecpt
