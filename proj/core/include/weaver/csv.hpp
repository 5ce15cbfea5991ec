#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace weaver::csv {

/// RFC-4180 table: header row plus records, CRLF line endings on output.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws if absent
  void append(std::vector<std::string> row);
};

std::string escape(const std::string& field);
void write(std::ostream& out, const Table& table);
void write_file(const std::string& path, const Table& table);
Table read(std::istream& in);
Table read_file(const std::string& path);

std::string format_double(double v);

}  // namespace weaver::csv
