#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace dcfuse {

// SHA-256 as lowercase hex.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);

// First eight bytes of the SHA-256 digest, big-endian. Used wherever a stable,
// platform-independent hash of a string is needed (validation split, sub-seeds).
std::uint64_t stable_hash64(std::string_view text);

} // namespace dcfuse
