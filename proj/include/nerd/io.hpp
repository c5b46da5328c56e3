#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace nerd {

std::vector<char> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

/// Writes via "<path>.tmp" + rename; creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::span<const char> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Lower-case hex SHA-256.
std::string sha256_hex(std::span<const char> bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace nerd
