#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tacserv/common.hpp"

namespace tacserv {

/// Minimal CSV table: first row is the header, all cells are doubles.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  int col_index(const std::string& name) const {
    for (size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return static_cast<int>(i);
    throw TacservError("csv column not found: " + name);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw TacservError("cannot write csv: " + path);
    out.precision(17);
    for (size_t i = 0; i < columns.size(); ++i)
      out << columns[i] << (i + 1 < columns.size() ? "," : "\n");
    for (const auto& row : rows) {
      for (size_t i = 0; i < row.size(); ++i)
        out << row[i] << (i + 1 < row.size() ? "," : "\n");
    }
  }

  static CsvTable load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TacservError("cannot open csv: " + path);
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw TacservError("empty csv: " + path);
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::stringstream ls(line);
      std::vector<double> row;
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
      t.rows.push_back(std::move(row));
    }
    return t;
  }
};

}  // namespace tacserv
