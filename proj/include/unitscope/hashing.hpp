#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace unitscope {

std::string sha256_hex(std::string_view bytes);
std::string sha256_hex_file(const std::filesystem::path& path);

// 16-hex-char prefix, used for directory names and cache keys.
std::string short_hash(std::string_view bytes);

}  // namespace unitscope
