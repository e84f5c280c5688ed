#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace sepsisfl {

using Digest = std::array<unsigned char, 32>;

Digest sha256(std::span<const unsigned char> bytes);
Digest sha256(const std::string& s);

std::string digest_hex(const Digest& d);

// Little-endian primitive encoders for canonical byte layouts.
void put_u32(std::vector<unsigned char>& out, std::uint32_t v);
void put_u64(std::vector<unsigned char>& out, std::uint64_t v);
void put_i64(std::vector<unsigned char>& out, std::int64_t v);
void put_f64(std::vector<unsigned char>& out, double v);
std::uint64_t get_u64(const unsigned char* p);
double get_f64(const unsigned char* p);

}  // namespace sepsisfl
