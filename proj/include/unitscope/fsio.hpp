#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace unitscope {

std::string read_file(const std::filesystem::path& path);

// write-temp-then-rename; never leaves a partially written file at `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

void ensure_dir(const std::filesystem::path& dir);

// "Glass Walls!" -> "glass-walls"
std::string slugify(const std::string& name);

std::string iso_utc_now();

}  // namespace unitscope
