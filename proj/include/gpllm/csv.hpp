#pragma once

#include "gpllm/dataset.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpllm {

class CsvError : public std::runtime_error {
public:
  explicit CsvError(const std::string &what) : std::runtime_error(what) {}
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\"");
  const auto e = s.find_last_not_of(" \t\r\"");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string &line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string &cell, std::size_t row, std::size_t col) {
  double v = 0.0;
  const char *first = cell.data();
  const char *last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (cell.empty() || ec != std::errc() || ptr != last)
    throw CsvError("non-numeric cell '" + cell + "' at row " + std::to_string(row) +
                   ", column " + std::to_string(col + 1));
  return v;
}

} // namespace detail

struct CsvTable {
  std::vector<std::string> header;
  Eigen::MatrixXd values;
};

/// Numeric CSV with a header row.
inline CsvTable read_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw CsvError(path + ": empty file");
  CsvTable t;
  t.header = detail::split_csv_line(line);
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != t.header.size())
      throw CsvError(path + ": row " + std::to_string(lineno) + " has " +
                     std::to_string(cells.size()) + " cells, expected " +
                     std::to_string(t.header.size()));
    std::vector<double> r;
    r.reserve(cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j)
      r.push_back(detail::parse_number(cells[j], lineno, j));
    rows.push_back(std::move(r));
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j)
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return t;
}

/// The response is named, or given as a 1-based column index; every other
/// column is an input.
inline Dataset ingest_csv(const std::string &path, const std::string &response_column,
                          DatasetOptions opt = {}) {
  const CsvTable t = read_csv(path);
  const auto &header = t.header;
  std::size_t resp = header.size();
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == response_column) resp = j;
  if (resp == header.size()) {
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(response_column.data(),
                                     response_column.data() + response_column.size(), idx);
    if (ec == std::errc() && ptr == response_column.data() + response_column.size() &&
        idx >= 1 && idx <= header.size())
      resp = idx - 1;
  }
  if (resp == header.size())
    throw CsvError(path + ": response column '" + response_column + "' not found");
  if (header.size() < 2) throw CsvError(path + ": need at least one input column");
  if (t.values.rows() < 2) throw CsvError(path + ": fewer than 2 data rows");

  const Eigen::Index n = t.values.rows();
  Eigen::MatrixXd X(n, t.values.cols() - 1);
  opt.names.clear();
  Eigen::Index c = 0;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == resp) continue;
    opt.names.push_back(header[j]);
    X.col(c++) = t.values.col(static_cast<Eigen::Index>(j));
  }
  return make_dataset(std::move(X), t.values.col(static_cast<Eigen::Index>(resp)), opt);
}

} // namespace gpllm
