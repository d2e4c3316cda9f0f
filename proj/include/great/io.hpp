#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace great::io {

/// Writes `content` to a sibling temp file and renames it over `path`, so
/// readers never observe a partial file.
void atomic_write(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);
/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);
/// FNV-1a 64-bit digest as 16 hex digits.
std::string fingerprint(std::string_view text);

}  // namespace great::io
