#pragma once

// Strict numeric CSV input and atomic text output.

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace deepwarp::io {

// A header row plus an all-numeric body.
struct Table {
  std::vector<std::string> header;
  Eigen::MatrixXd values;

  Eigen::Index rows() const { return values.rows(); }
  std::optional<Eigen::Index> find(std::string_view name) const;
  Eigen::Index column(std::string_view name) const;  // throws DataError if absent
  Eigen::VectorXd col(std::string_view name) const { return values.col(column(name)); }
};

// Rejects empty files, duplicate or empty header names, ragged rows and any
// field that is not a finite decimal number. Leading '#' comment lines and
// blank trailing lines are ignored.
Table parse_csv(const std::string& text, const std::string& source = "<memory>");
Table read_csv(const std::string& path);

std::string read_text(const std::string& path);

// Writes through a temporary sibling file and renames it into place.
void write_text_atomic(const std::string& path, const std::string& content);

// Shortest decimal form that reads back to the same double.
std::string format_double(double value);

std::string csv_row(const std::vector<std::string>& fields);

}  // namespace deepwarp::io
