#include "phono/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

namespace phono::csv {

std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_row(std::ostream& out, const Row& row) {
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out << ',';
    out << quote(row[i]);
  }
  out << '\n';
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::size_t Table::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw CsvError("missing column '" + std::string(name) + "'");
}

Table read(std::istream& in, const std::string& source) {
  Table table;
  Row row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  auto end_row = [&] {
    row.push_back(std::move(field));
    field.clear();
    if (table.header.empty())
      table.header = std::move(row);
    else if (table.header.size() != row.size())
      throw CsvError(source + ":" + std::to_string(line) + ": expected " + std::to_string(table.header.size()) +
                     " fields, got " + std::to_string(row.size()));
    else
      table.rows.push_back(std::move(row));
    row.clear();
    field_started = false;
  };
  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) throw CsvError(source + ":" + std::to_string(line) + ": stray quote");
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r': break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field += c;
        field_started = true;
    }
  }
  if (in_quotes) throw CsvError(source + ": unterminated quoted field");
  if (field_started || !row.empty()) end_row();
  return table;
}

Table read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError("cannot open " + path.string());
  return read(in, path.string());
}

void write_file(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError("cannot write " + path.string());
  write_row(out, table.header);
  for (const auto& r : table.rows) write_row(out, r);
  if (!out) throw CsvError("failed writing " + path.string());
}

}  // namespace phono::csv
