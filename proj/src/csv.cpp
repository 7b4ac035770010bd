#include "tsad/csv.hpp"

#include "tsad/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tsad::csv {

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

} // namespace

std::vector<std::string> split_line(std::string_view line)
{
    std::vector<std::string> cells;
    std::size_t begin = 0;
    while (true) {
        const auto comma = line.find(',', begin);
        auto cell = trim(line.substr(begin, comma == std::string_view::npos ? std::string_view::npos : comma - begin));
        if (cell.size() >= 2 && cell.front() == '"' && cell.back() == '"') {
            cell = cell.substr(1, cell.size() - 2);
        }
        cells.emplace_back(cell);
        if (comma == std::string_view::npos) {
            break;
        }
        begin = comma + 1;
    }
    return cells;
}

Table read(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open CSV file '" + path.string() + "'");
    }
    Table table;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
            line.erase(0, 3);
        }
        if (trim(line).empty()) {
            continue;
        }
        auto cells = split_line(line);
        if (!have_header) {
            table.header = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != table.header.size()) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(table.header.size()) + " cells, found " + std::to_string(cells.size()));
        }
        table.rows.push_back(std::move(cells));
    }
    if (!have_header) {
        throw DataError("CSV file '" + path.string() + "' is empty");
    }
    return table;
}

double parse_double(std::string_view cell, std::string_view context)
{
    cell = trim(cell);
    if (!cell.empty() && cell.front() == '+') {
        cell.remove_prefix(1);
    }
    double value = 0.0;
    const auto* end = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
    if (cell.empty() || ec != std::errc() || ptr != end) {
        throw DataError(std::string(context) + ": non-numeric cell '" + std::string(cell) + "'");
    }
    if (!std::isfinite(value)) {
        throw DataError(std::string(context) + ": non-finite cell '" + std::string(cell) + "'");
    }
    return value;
}

std::string format_double(double value)
{
    char buffer[64];
    const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, ptr);
}

std::string join(const std::vector<std::string>& cells)
{
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += cells[i];
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& content)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError("cannot write '" + path.string() + "'");
    }
    out << content;
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace tsad::csv
