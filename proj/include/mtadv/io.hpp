#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mtadv {

/// Writes to `<path>.tmp` and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

/// Lowercase hex FNV-1a 64 of a file tree's relative paths and contents.
std::string tree_checksum(const std::filesystem::path& dir);

}  // namespace mtadv
