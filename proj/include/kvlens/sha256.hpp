#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace kvlens::io {

// FIPS 180-4 SHA-256, hex digest. Used for manifest checksums only.
std::string sha256_hex(std::span<const std::uint8_t> data);
std::string sha256_hex(const std::string& data);
std::string sha256_file_hex(const std::string& path);

} // namespace kvlens::io
