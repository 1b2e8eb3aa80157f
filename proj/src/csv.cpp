#include "mbsgd/csv.hpp"

#include "mbsgd/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <utility>

namespace mbsgd {
namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

bool parse_double(std::string_view cell, double& out) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  if (cell.empty()) return false;
  double v = 0.0;
  const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) return false;
  if (!std::isfinite(v)) return false;
  out = v;
  return true;
}

Dataset parse_csv(std::istream& in, const std::vector<std::string>& label_columns, const std::string& source) {
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ParseError(source + ": missing header row", 1, 0);
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);
  const std::size_t width = header.size();

  std::vector<bool> is_label(width, false);
  std::vector<std::size_t> label_order;
  for (const auto& spec : label_columns) {
    std::size_t col = width;
    for (std::size_t c = 0; c < width; ++c)
      if (header[c] == spec) col = c;
    if (col == width) {
      std::size_t idx = 0;
      const auto res = std::from_chars(spec.data(), spec.data() + spec.size(), idx);
      if (res.ec == std::errc() && res.ptr == spec.data() + spec.size() && idx < width) col = idx;
    }
    if (col == width) throw ParseError(source + ": unknown label column '" + spec + "'", 1, 0);
    if (!is_label[col]) label_order.push_back(col);
    is_label[col] = true;
  }

  Dataset out;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < width; ++c)
    if (!is_label[c]) {
      feature_cols.push_back(c);
      out.feature_names.push_back(header[c]);
    }
  for (auto c : label_order) out.label_names.push_back(header[c]);

  std::vector<std::vector<double>> rows;
  long row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != width)
      throw ParseError(source + ": row " + std::to_string(row_no) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(width),
                       row_no, static_cast<long>(std::min(cells.size(), width)) + 1);
    std::vector<double> values(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (!parse_double(cells[c], values[c]))
        throw ParseError(source + ": row " + std::to_string(row_no) + ", column " + std::to_string(c + 1) + " ('" +
                             header[c] + "'): not a finite number: '" + trim(cells[c]) + "'",
                         row_no, static_cast<long>(c) + 1);
    }
    rows.push_back(std::move(values));
  }

  const auto n = static_cast<Eigen::Index>(rows.size());
  out.points.resize(n, static_cast<Eigen::Index>(feature_cols.size()));
  out.labels.resize(n, static_cast<Eigen::Index>(label_order.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < feature_cols.size(); ++j)
      out.points(i, static_cast<Eigen::Index>(j)) = rows[i][feature_cols[j]];
    for (std::size_t j = 0; j < label_order.size(); ++j)
      out.labels(i, static_cast<Eigen::Index>(j)) = rows[i][label_order[j]];
  }
  return out;
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& label_columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, label_columns, path.string());
}

void write_csv(std::ostream& out, const Dataset& data) {
  std::string sep;
  for (const auto& n : data.feature_names) out << std::exchange(sep, ",") << n;
  for (const auto& n : data.label_names) out << std::exchange(sep, ",") << n;
  out << '\n';
  for (Eigen::Index i = 0; i < data.points.rows(); ++i) {
    sep.clear();
    for (Eigen::Index j = 0; j < data.points.cols(); ++j) out << std::exchange(sep, ",") << format_double(data.points(i, j));
    for (Eigen::Index j = 0; j < data.labels.cols(); ++j) out << std::exchange(sep, ",") << format_double(data.labels(i, j));
    out << '\n';
  }
}

void save_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_csv(out, data);
  if (!out) throw IoError("write failed for " + path.string());
}

Eigen::MatrixXd one_hot(const Eigen::VectorXd& classes, std::vector<std::string>* names) {
  std::map<long long, Eigen::Index> column;
  for (Eigen::Index i = 0; i < classes.size(); ++i) {
    const double c = classes(i);
    if (c != std::floor(c)) throw InputError("class labels must be integers for one-hot encoding");
    column.emplace(static_cast<long long>(c), 0);
  }
  Eigen::Index next = 0;
  for (auto& [value, col] : column) {
    col = next++;
    if (names) names->push_back("class_" + std::to_string(value));
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(classes.size(), next);
  for (Eigen::Index i = 0; i < classes.size(); ++i) out(i, column.at(static_cast<long long>(classes(i)))) = 1.0;
  return out;
}

}  // namespace mbsgd
