#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace mcqd {

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

// First 8 bytes of SHA-256, big-endian. Stable across processes and platforms.
std::uint64_t stable_hash64(std::string_view bytes);

}  // namespace mcqd
