#pragma once

#include <cstdint>
#include <string>

namespace evplab {

// SHA-256 of a byte string, hex encoded. Used for run-manifest content
// hashes only.
std::string sha256_hex(const std::string& data);

std::string sha256_file_hex(const std::string& path);

}  // namespace evplab
