#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace durastack::detail {

/// Writes via a sibling temporary and renames over the destination, so
/// readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

}  // namespace durastack::detail
