#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace splinemix::cli {

/// 17 significant digits, "%.17g". Round-trips every finite double.
[[nodiscard]] std::string format_exact(double v);
/// 4 significant digits for terminal tables.
[[nodiscard]] std::string format_short(double v);

/// Writes content to a sibling temporary file and renames it over path.
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// "4..10", "4,6,8" or a mix such as "4..6,9". Throws
/// Error(invalid_argument) on an empty or malformed list.
[[nodiscard]] std::vector<int> parse_int_list(std::string_view text);

}  // namespace splinemix::cli
