#include "consilium/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>

#include "consilium/error.hpp"

namespace consilium::crypto {
namespace {

struct CipherCtxDeleter {
    void operator()(EVP_CIPHER_CTX* ctx) const { EVP_CIPHER_CTX_free(ctx); }
};
struct MdCtxDeleter {
    void operator()(EVP_MD_CTX* ctx) const { EVP_MD_CTX_free(ctx); }
};
using CipherCtx = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;
using MdCtx = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;

[[noreturn]] void fail(const char* what) { throw Error(ErrorCode::IoError, std::string("openssl: ") + what); }

void check_sizes(std::span<const std::uint8_t> key, std::span<const std::uint8_t> nonce) {
    if (key.size() != kKeySize || nonce.size() != kNonceSize) fail("bad key or nonce size");
}

}  // namespace

std::string to_hex(std::span<const std::uint8_t> data) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (auto b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0x0f]);
    }
    return out;
}

std::string sha256_hex(std::span<const std::uint8_t> data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) fail("digest");
    return to_hex({digest, len});
}

std::string sha256_hex(std::string_view data) {
    return sha256_hex(std::span(reinterpret_cast<const std::uint8_t*>(data.data()), data.size()));
}

std::string sha256_file_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingWeightFile, "cannot open " + path.string());
    MdCtx ctx(EVP_MD_CTX_new());
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) fail("digest init");
    std::vector<char> buffer(1 << 16);
    while (in) {
        in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
        const auto got = in.gcount();
        if (got > 0 && EVP_DigestUpdate(ctx.get(), buffer.data(), static_cast<std::size_t>(got)) != 1)
            fail("digest update");
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) fail("digest final");
    return to_hex({digest, len});
}

Bytes random_bytes(std::size_t count) {
    Bytes out(count);
    if (count > 0 && RAND_bytes(out.data(), static_cast<int>(count)) != 1) fail("RAND_bytes");
    return out;
}

SealedBox aes256gcm_encrypt(std::span<const std::uint8_t> key, std::span<const std::uint8_t> nonce,
                            std::span<const std::uint8_t> aad, std::span<const std::uint8_t> plaintext) {
    check_sizes(key, nonce);
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx) fail("ctx");
    if (EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(nonce.size()), nullptr) != 1 ||
        EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) != 1)
        fail("encrypt init");
    int len = 0;
    if (!aad.empty() && EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
        fail("aad");
    SealedBox box;
    box.ciphertext.resize(plaintext.size());
    if (!plaintext.empty() &&
        EVP_EncryptUpdate(ctx.get(), box.ciphertext.data(), &len, plaintext.data(),
                          static_cast<int>(plaintext.size())) != 1)
        fail("encrypt");
    int tail = 0;
    if (EVP_EncryptFinal_ex(ctx.get(), box.ciphertext.data() + len, &tail) != 1) fail("encrypt final");
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, static_cast<int>(kTagSize), box.tag.data()) != 1)
        fail("tag");
    return box;
}

bool aes256gcm_decrypt(std::span<const std::uint8_t> key, std::span<const std::uint8_t> nonce,
                       std::span<const std::uint8_t> aad, std::span<const std::uint8_t> ciphertext,
                       std::span<const std::uint8_t> tag, Bytes& plaintext_out) {
    plaintext_out.clear();
    check_sizes(key, nonce);
    if (tag.size() != kTagSize) return false;
    CipherCtx ctx(EVP_CIPHER_CTX_new());
    if (!ctx) fail("ctx");
    if (EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
        EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, static_cast<int>(nonce.size()), nullptr) != 1 ||
        EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) != 1)
        fail("decrypt init");
    int len = 0;
    if (!aad.empty() && EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1)
        return false;
    Bytes buffer(ciphertext.size());
    if (!ciphertext.empty() &&
        EVP_DecryptUpdate(ctx.get(), buffer.data(), &len, ciphertext.data(), static_cast<int>(ciphertext.size())) != 1)
        return false;
    std::array<std::uint8_t, kTagSize> tag_copy{};
    std::copy(tag.begin(), tag.end(), tag_copy.begin());
    if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, static_cast<int>(kTagSize), tag_copy.data()) != 1)
        return false;
    int tail = 0;
    if (EVP_DecryptFinal_ex(ctx.get(), buffer.data() + len, &tail) != 1) {
        std::fill(buffer.begin(), buffer.end(), 0);
        return false;
    }
    plaintext_out = std::move(buffer);
    return true;
}

}  // namespace consilium::crypto
