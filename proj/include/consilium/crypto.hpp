#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace consilium::crypto {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kKeySize = 32;
inline constexpr std::size_t kNonceSize = 12;
inline constexpr std::size_t kTagSize = 16;

/// SHA-256, lowercase hex.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::filesystem::path& path);

Bytes random_bytes(std::size_t count);

std::string to_hex(std::span<const std::uint8_t> data);

struct SealedBox {
    Bytes ciphertext;
    std::array<std::uint8_t, kTagSize> tag{};
};

/// AES-256-GCM. `aad` is authenticated but not encrypted.
SealedBox aes256gcm_encrypt(std::span<const std::uint8_t> key,
                            std::span<const std::uint8_t> nonce,
                            std::span<const std::uint8_t> aad,
                            std::span<const std::uint8_t> plaintext);

/// Returns false on authentication failure; `plaintext_out` is left empty then.
bool aes256gcm_decrypt(std::span<const std::uint8_t> key,
                       std::span<const std::uint8_t> nonce,
                       std::span<const std::uint8_t> aad,
                       std::span<const std::uint8_t> ciphertext,
                       std::span<const std::uint8_t> tag,
                       Bytes& plaintext_out);

}  // namespace consilium::crypto
