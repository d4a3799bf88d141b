#pragma once

// RFC 4180 CSV: fields containing a comma, quote, CR or LF are quoted and
// embedded quotes doubled. Rows end in LF.

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace phono::csv {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Row = std::vector<std::string>;

std::string quote(std::string_view field);
void write_row(std::ostream& out, const Row& row);

// Shortest representation that parses back to the same double.
std::string format_double(double v);

struct Table {
  Row header;
  std::vector<Row> rows;

  // Index of a header column; throws CsvError when absent.
  std::size_t column(std::string_view name) const;
};

Table read(std::istream& in, const std::string& source = "<stream>");
Table read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Table& table);

}  // namespace phono::csv
