#include "dcfuse/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <memory>
#include <stdexcept>

namespace dcfuse {

namespace {

std::array<unsigned char, 32> sha256(const void* data, std::size_t n)
{
    std::array<unsigned char, 32> out{};
    unsigned int len = 0;
    if (EVP_Digest(data, n, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size())
        throw std::runtime_error("SHA-256 failed");
    return out;
}

} // namespace

std::string sha256_hex(std::span<const std::byte> bytes)
{
    static constexpr char kHex[] = "0123456789abcdef";
    const auto d = sha256(bytes.data(), bytes.size());
    std::string s;
    s.reserve(64);
    for (unsigned char c : d) {
        s.push_back(kHex[c >> 4]);
        s.push_back(kHex[c & 15]);
    }
    return s;
}

std::string sha256_hex(std::string_view text)
{
    return sha256_hex(std::as_bytes(std::span(text.data(), text.size())));
}

std::uint64_t stable_hash64(std::string_view text)
{
    const auto d = sha256(text.data(), text.size());
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
    return v;
}

} // namespace dcfuse
