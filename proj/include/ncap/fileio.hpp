#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace ncap {

// Writes to a sibling temp file, then renames over `path`. Readers never see a partial file.
// Throws std::runtime_error on I/O failure (the temp file is removed).
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

// Throws std::runtime_error when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

}  // namespace ncap
