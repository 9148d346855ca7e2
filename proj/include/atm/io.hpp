#pragma once

#include <filesystem>
#include <string>

namespace atm {

/// %.17g: enough digits to round-trip any double.
std::string format_double(double v);

std::string read_text(const std::filesystem::path& path);
/// Writes `text` byte for byte, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace atm
