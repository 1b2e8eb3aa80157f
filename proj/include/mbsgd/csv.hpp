#pragma once

#include "mbsgd/spectral.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mbsgd {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

/// Parses a whole cell as a finite double; returns false on any other content.
bool parse_double(std::string_view cell, double& out);

struct Dataset {
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;
  RowMatrix points;        // n x (feature count)
  Eigen::MatrixXd labels;  // n x (label count)
};

/// Reads a headed, comma-separated numeric table. `label_columns` names columns by header
/// text or by zero-based index; every other column is a feature. Row order is preserved.
/// Throws ParseError (with 1-based row/column) on ragged rows, non-numeric or non-finite cells,
/// or a missing header; IoError when the file cannot be opened.
Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& label_columns);
Dataset parse_csv(std::istream& in, const std::vector<std::string>& label_columns,
                  const std::string& source = "<stream>");

/// Writes features then labels with shortest round-trip formatting.
void save_csv(const std::filesystem::path& path, const Dataset& data);
void write_csv(std::ostream& out, const Dataset& data);

/// Expands one integer class column into one-hot columns ordered by class value.
Eigen::MatrixXd one_hot(const Eigen::VectorXd& classes, std::vector<std::string>* names = nullptr);

}  // namespace mbsgd
