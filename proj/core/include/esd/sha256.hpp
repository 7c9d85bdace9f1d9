#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace esd {

/// SHA-256 of a byte string, as lowercase hex. Used for manifest content
/// hashes; self-contained so the core library has no crypto dependency.
std::string sha256_hex(std::string_view data);

/// SHA-256 of a file's contents.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace esd
