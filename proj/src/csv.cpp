#include "apex/csv.hpp"

#include <cmath>
#include <fstream>

#include "apex/errors.hpp"
#include "apex/keyvalue.hpp"

namespace apex {

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

}  // namespace

CsvTable read_numeric_csv(const std::filesystem::path& path,
                          std::initializer_list<std::string_view> expected_header) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string name = path.filename().string();

  CsvTable table;
  std::string raw;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty()) continue;
    auto cells = split(line);
    if (!have_header) {
      std::vector<std::string_view> expected(expected_header);
      if (cells != expected) {
        std::string want;
        for (auto e : expected) want += (want.empty() ? "" : ",") + std::string(e);
        throw ParseError(name + ": expected header '" + want + "'", line_no);
      }
      for (auto c : cells) table.header.emplace_back(c);
      have_header = true;
      continue;
    }
    if (cells.size() != table.header.size()) {
      throw ParseError(name + ": expected " + std::to_string(table.header.size()) +
                           " columns, found " + std::to_string(cells.size()),
                       line_no);
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v = parse_double(cells[i], name + " column '" + table.header[i] + "'", line_no);
      if (!std::isfinite(v)) {
        throw ParseError(name + ": non-finite value in column '" + table.header[i] + "'", line_no);
      }
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw ParseError(name + ": empty file");
  return table;
}

}  // namespace apex
