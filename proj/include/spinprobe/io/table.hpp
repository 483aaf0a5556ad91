// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <istream>
#include <map>
#include <string>
#include <vector>

namespace spinprobe::io {

/// Named numeric columns from comma-separated text. Lines starting with '#' are comments
/// (units go there); the first other line is the header.
struct MeasurementTable {
  std::vector<std::string> names;  ///< header order
  std::map<std::string, std::vector<double>> columns;
  std::size_t row_count = 0;

  bool has(const std::string& name) const { return columns.count(name) > 0; }
  /// Throws ValidationError naming the missing column and the ones present.
  const std::vector<double>& column(const std::string& name) const;
  /// Throws ValidationError unless the column is strictly increasing.
  void require_increasing(const std::string& name) const;
};

/// Throws ParseError carrying the 1-based line number for ragged rows, non-numeric cells,
/// duplicate or empty headers, and files without data rows.
MeasurementTable parse_table(std::istream& in);
MeasurementTable load_table(const std::string& path);

/// Writes `comments` as '#' lines, then the header and rows with round-trip precision.
void write_table(std::ostream& out, const std::vector<std::string>& names,
                 const std::vector<std::vector<double>>& columns,
                 const std::vector<std::string>& comments = {});

}  // namespace spinprobe::io
