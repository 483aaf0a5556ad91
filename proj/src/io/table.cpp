// SPDX-License-Identifier: Apache-2.0
#include "spinprobe/io/table.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>

#include "spinprobe/errors.hpp"

namespace spinprobe::io {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_double(const std::string& s, double& v) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace

const std::vector<double>& MeasurementTable::column(const std::string& name) const {
  const auto it = columns.find(name);
  if (it == columns.end()) {
    std::string present;
    for (const auto& n : names) present += (present.empty() ? "" : ", ") + n;
    throw ValidationError("missing column '" + name + "' (columns present: " + present + ")");
  }
  return it->second;
}

void MeasurementTable::require_increasing(const std::string& name) const {
  const auto& c = column(name);
  for (std::size_t i = 1; i < c.size(); ++i)
    if (!(c[i] > c[i - 1])) throw ValidationError("column '" + name + "' must be strictly increasing (row " + std::to_string(i + 1) + ")");
}

MeasurementTable parse_table(std::istream& in) {
  MeasurementTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = trim(line);
    if (s.empty() || s.front() == '#') continue;
    auto cells = split(s);
    if (!have_header) {
      std::set<std::string> seen;
      for (const auto& c : cells) {
        if (c.empty()) throw ParseError("empty column name in header", line_no);
        if (!seen.insert(c).second) throw ParseError("duplicate column '" + c + "'", line_no);
        t.names.push_back(c);
        t.columns[c];
      }
      have_header = true;
      continue;
    }
    if (cells.size() != t.names.size())
      throw ParseError("expected " + std::to_string(t.names.size()) + " fields, found " + std::to_string(cells.size()),
                       line_no);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v = 0.0;
      if (!parse_double(cells[i], v))
        throw ParseError("non-numeric value '" + cells[i] + "' in column '" + t.names[i] + "'", line_no);
      t.columns[t.names[i]].push_back(v);
    }
    ++t.row_count;
  }
  if (!have_header) throw ParseError("no header row", line_no);
  if (t.row_count == 0) throw ParseError("no data rows", line_no);
  return t;
}

MeasurementTable load_table(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path, 0);
  try {
    return parse_table(f);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), 0);
  }
}

void write_table(std::ostream& out, const std::vector<std::string>& names,
                 const std::vector<std::vector<double>>& columns, const std::vector<std::string>& comments) {
  if (names.size() != columns.size()) throw DomainError("write_table: one name per column required");
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (const auto& c : columns)
    if (c.size() != rows) throw DomainError("write_table: columns differ in length");
  for (const auto& c : comments) out << "# " << c << '\n';
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", columns[i][r]);
      out << (i ? "," : "") << buf;
    }
    out << '\n';
  }
}

}  // namespace spinprobe::io
