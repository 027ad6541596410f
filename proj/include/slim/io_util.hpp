#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace slim {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
/// Whole-string parse; nullopt on trailing garbage or an empty string.
std::optional<double> parse_double(std::string_view text);
std::optional<long long> parse_int(std::string_view text);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace slim
