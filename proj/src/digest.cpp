#include "sepsisfl/digest.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <stdexcept>

#include "sepsisfl/common.hpp"

namespace sepsisfl {

Digest sha256(std::span<const unsigned char> bytes) {
    Digest out{};
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx, out.data(), &len) != 1 || len != out.size()) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256: digest computation failed");
    }
    EVP_MD_CTX_free(ctx);
    return out;
}

Digest sha256(const std::string& s) {
    return sha256(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string digest_hex(const Digest& d) {
    return to_hex(d.data(), d.size());
}

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_i64(std::vector<unsigned char>& out, std::int64_t v) {
    put_u64(out, static_cast<std::uint64_t>(v));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

double get_f64(const unsigned char* p) {
    return std::bit_cast<double>(get_u64(p));
}

}  // namespace sepsisfl
