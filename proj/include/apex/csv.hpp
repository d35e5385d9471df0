#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

namespace apex {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

// Reads a comma-separated file of numbers whose header must equal
// `expected_header` exactly (after trimming). Any malformed cell raises a
// ParseError that names the line.
CsvTable read_numeric_csv(const std::filesystem::path& path,
                          std::initializer_list<std::string_view> expected_header);

}  // namespace apex
