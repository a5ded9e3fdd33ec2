#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace slab {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::vector<std::string> read_lines(const std::filesystem::path& path);

// Canonical text for a double: shortest round-trip representation.
std::string format_double(double v);

}  // namespace slab
