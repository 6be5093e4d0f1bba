#pragma once

#include <cstdio>
#include <optional>
#include <sstream>

#include "crisk/pipeline/cv.hpp"

namespace crisk::pipeline {

struct Cell {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool best = false;

  bool operator==(const Cell&) const = default;
};

struct TableRow {
  std::string label;
  std::vector<std::optional<Cell>> cells;  ///< one per column; empty when the risk is absent

  bool operator==(const TableRow&) const = default;
};

/// Rows are reports (modality x model), columns are risks.
struct Table {
  std::string title;
  std::vector<std::string> columns;
  std::vector<TableRow> rows;

  bool operator==(const Table&) const = default;
};

/// "0.628 (0.615, 0.642)".
inline std::string format_cell(const Cell& c) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f (%.3f, %.3f)", c.mean, c.lo, c.hi);
  return buf;
}

/// Builds the table; the highest mean in each column is flagged (first row
/// wins ties).
inline Table emit_report(const std::vector<CVReport>& reports, const std::string& title = "") {
  if (reports.empty()) throw ConfigError("emit_report needs at least one report");
  Table t;
  t.title = title;
  for (auto& r : reports)
    for (auto& s : r.summary)
      if (std::find(t.columns.begin(), t.columns.end(), s.risk) == t.columns.end()) t.columns.push_back(s.risk);
  for (auto& r : reports) {
    TableRow row;
    row.label = r.label;
    for (auto& col : t.columns) {
      auto it = std::find_if(r.summary.begin(), r.summary.end(), [&](auto& s) { return s.risk == col; });
      if (it == r.summary.end()) {
        row.cells.emplace_back();
      } else {
        row.cells.push_back(Cell{it->mean, it->lo, it->hi, false});
      }
    }
    t.rows.push_back(std::move(row));
  }
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    std::optional<std::size_t> best;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      auto& cell = t.rows[r].cells[c];
      if (cell && (!best || cell->mean > t.rows[*best].cells[c]->mean)) best = r;
    }
    if (best) t.rows[*best].cells[c]->best = true;
  }
  return t;
}

/// Best cells are bold.
inline std::string to_markdown(const Table& t) {
  std::ostringstream os;
  if (!t.title.empty()) os << "## " << t.title << "\n\n";
  os << "| Model |";
  for (auto& c : t.columns) os << " " << c << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < t.columns.size(); ++i) os << "---|";
  os << "\n";
  for (auto& r : t.rows) {
    os << "| " << r.label << " |";
    for (auto& cell : r.cells) {
      if (!cell) {
        os << " - |";
      } else if (cell->best) {
        os << " **" << format_cell(*cell) << "** |";
      } else {
        os << " " << format_cell(*cell) << " |";
      }
    }
    os << "\n";
  }
  return os.str();
}

inline nlohmann::json to_json(const Table& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (auto& r : t.rows) {
    nlohmann::json cells = nlohmann::json::array();
    for (auto& c : r.cells) {
      if (!c) {
        cells.push_back(nullptr);
      } else {
        cells.push_back({{"mean", c->mean}, {"lo", c->lo}, {"hi", c->hi}, {"best", c->best},
                         {"text", format_cell(*c)}});
      }
    }
    rows.push_back({{"label", r.label}, {"cells", cells}});
  }
  return {{"title", t.title}, {"columns", t.columns}, {"rows", rows}};
}

inline Table table_from_json(const nlohmann::json& j) {
  try {
    Table t;
    t.title = j.at("title").get<std::string>();
    t.columns = j.at("columns").get<std::vector<std::string>>();
    for (auto& rj : j.at("rows")) {
      TableRow r;
      r.label = rj.at("label").get<std::string>();
      for (auto& cj : rj.at("cells")) {
        if (cj.is_null()) {
          r.cells.emplace_back();
        } else {
          r.cells.push_back(Cell{cj.at("mean").get<double>(), cj.at("lo").get<double>(), cj.at("hi").get<double>(),
                                 cj.at("best").get<bool>()});
        }
      }
      if (r.cells.size() != t.columns.size()) throw DataError("table row '" + r.label + "' has wrong width");
      t.rows.push_back(std::move(r));
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed table: ") + e.what());
  }
}

}  // namespace crisk::pipeline
