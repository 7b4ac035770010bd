#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tsad::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Reads a comma-separated file with a mandatory header row. Cells are
/// whitespace-trimmed and surrounding double quotes are stripped. Blank
/// lines are skipped; ragged rows raise DataError.
Table read(const std::filesystem::path& path);

std::vector<std::string> split_line(std::string_view line);

/// Strict decimal parse: rejects empty cells, trailing garbage and non-finite values.
double parse_double(std::string_view cell, std::string_view context);

/// Shortest representation that round-trips exactly.
std::string format_double(double value);

std::string join(const std::vector<std::string>& cells);

void write_text(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

} // namespace tsad::csv
