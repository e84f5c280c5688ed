#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sepsisfl {

// Error categories. The CLI maps these onto exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct LookupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct UndefinedMetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string to_hex(const unsigned char* bytes, std::size_t n);
// Returns false if `hex` is not exactly 2*n hex digits.
bool from_hex(const std::string& hex, unsigned char* out, std::size_t n);

}  // namespace sepsisfl
