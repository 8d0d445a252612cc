#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hacl::util {

/// SHA-256 of a byte buffer, lowercase hex.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);

/// SHA-256 of a file's contents. Throws std::runtime_error on I/O failure.
std::string sha256_file(const std::string& path);

}  // namespace hacl::util
