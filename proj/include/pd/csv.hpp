#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pd {

// Shortest decimal text that round-trips to the same double.
std::string format_double(double v);
// Fixed-point text with the given number of decimals.
std::string format_fixed(double v, int decimals);

// RFC-4180 style CSV: header row, comma separated, fields quoted only when
// they contain a comma, quote, or newline.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);

  void add_row(std::vector<std::string> row);
  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& data() const { return rows_; }

  std::string to_string() const;
  void write(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Parses text written by CsvTable (quoted fields supported).
CsvTable parse_csv(std::string_view text);

}  // namespace pd
