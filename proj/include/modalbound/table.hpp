#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "modalbound/error.hpp"
#include "modalbound/numeric.hpp"

namespace modalbound {

// One table cell aggregates the replicate values that landed in it.
struct CellStat {
  std::vector<double> values;
  std::string digest;

  int count() const { return static_cast<int>(values.size()); }

  double mean() const {
    return values.empty() ? std::numeric_limits<double>::quiet_NaN()
                          : kahan_mean(values);
  }

  double sd() const { return values.empty() ? 0.0 : sample_sd(values); }

  bool operator==(const CellStat& o) const {
    return values == o.values && digest == o.digest;
  }
};

// A labeled grid of replicate-aggregated results plus provenance, the
// common output of every experiment scenario.
class ResultTable {
 public:
  ResultTable() = default;

  ResultTable(std::string name, std::vector<std::string> row_labels,
              std::vector<std::string> col_labels)
      : name_(std::move(name)),
        rows_(std::move(row_labels)),
        cols_(std::move(col_labels)) {
    if (rows_.empty() || cols_.empty())
      throw ConfigError("result table needs at least one row and column");
    cells_.assign(rows_.size() * cols_.size(), CellStat{});
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& row_labels() const { return rows_; }
  const std::vector<std::string>& col_labels() const { return cols_; }
  int row_count() const { return static_cast<int>(rows_.size()); }
  int col_count() const { return static_cast<int>(cols_.size()); }

  int row_index(const std::string& label) const {
    auto it = std::find(rows_.begin(), rows_.end(), label);
    if (it == rows_.end()) throw ConfigError("unknown row '" + label + "'");
    return static_cast<int>(it - rows_.begin());
  }

  int col_index(const std::string& label) const {
    auto it = std::find(cols_.begin(), cols_.end(), label);
    if (it == cols_.end()) throw ConfigError("unknown column '" + label + "'");
    return static_cast<int>(it - cols_.begin());
  }

  CellStat& cell(int r, int c) {
    check(r, c);
    return cells_[static_cast<std::size_t>(r) * cols_.size() +
                  static_cast<std::size_t>(c)];
  }

  const CellStat& cell(int r, int c) const {
    check(r, c);
    return cells_[static_cast<std::size_t>(r) * cols_.size() +
                  static_cast<std::size_t>(c)];
  }

  const CellStat& at(const std::string& row, const std::string& col) const {
    return cell(row_index(row), col_index(col));
  }

  void add_value(const std::string& row, const std::string& col, double v) {
    cell(row_index(row), col_index(col)).values.push_back(v);
  }

  std::map<std::string, std::string>& provenance() { return provenance_; }
  const std::map<std::string, std::string>& provenance() const {
    return provenance_;
  }

  bool operator==(const ResultTable& o) const {
    return name_ == o.name_ && rows_ == o.rows_ && cols_ == o.cols_ &&
           cells_ == o.cells_ && provenance_ == o.provenance_;
  }

  // CSV layout: header row of column labels; each cell is the quoted
  // triple "mean,sd,count".
  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for write: " + path);
    out << name_;
    for (const auto& c : cols_) out << "," << c;
    out << "\n";
    for (int r = 0; r < row_count(); ++r) {
      out << rows_[static_cast<std::size_t>(r)];
      for (int c = 0; c < col_count(); ++c) {
        const CellStat& s = cell(r, c);
        out << ",\"" << format_double(s.mean()) << ","
            << format_double(s.sd()) << "," << s.count() << "\"";
      }
      out << "\n";
    }
    if (!out) throw Error("write failed: " + path);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["name"] = name_;
    j["rows"] = rows_;
    j["cols"] = cols_;
    nlohmann::json cells = nlohmann::json::array();
    for (int r = 0; r < row_count(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < col_count(); ++c) {
        const CellStat& s = cell(r, c);
        row.push_back({{"values", s.values},
                       {"mean", s.mean()},
                       {"sd", s.sd()},
                       {"count", s.count()},
                       {"digest", s.digest}});
      }
      cells.push_back(std::move(row));
    }
    j["cells"] = std::move(cells);
    j["provenance"] = provenance_;
    return j;
  }

  static ResultTable from_json(const nlohmann::json& j) {
    ResultTable t(j.at("name").get<std::string>(),
                  j.at("rows").get<std::vector<std::string>>(),
                  j.at("cols").get<std::vector<std::string>>());
    const auto& cells = j.at("cells");
    for (int r = 0; r < t.row_count(); ++r)
      for (int c = 0; c < t.col_count(); ++c) {
        const auto& jc = cells.at(static_cast<std::size_t>(r))
                             .at(static_cast<std::size_t>(c));
        CellStat& s = t.cell(r, c);
        s.values = jc.at("values").get<std::vector<double>>();
        s.digest = jc.at("digest").get<std::string>();
      }
    t.provenance_ =
        j.at("provenance").get<std::map<std::string, std::string>>();
    return t;
  }

  void write_json(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot open for write: " + path);
    out << to_json().dump(2) << "\n";
    if (!out) throw Error("write failed: " + path);
  }

  // Line plot of cell means per row across columns, with +-1 sd whiskers.
  void write_svg(const std::string& path) const {
    const double width = 720, height = 480;
    const double ml = 70, mr = 160, mt = 40, mb = 50;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int r = 0; r < row_count(); ++r)
      for (int c = 0; c < col_count(); ++c) {
        const CellStat& s = cell(r, c);
        if (s.count() == 0) continue;
        lo = std::min(lo, s.mean() - s.sd());
        hi = std::max(hi, s.mean() + s.sd());
      }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12) {
      lo -= 0.5;
      hi += 0.5;
    }
    double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;

    auto xpos = [&](int c) {
      return col_count() == 1
                 ? ml + pw / 2
                 : ml + pw * static_cast<double>(c) /
                           static_cast<double>(col_count() - 1);
    };
    auto ypos = [&](double v) { return mt + ph * (hi - v) / (hi - lo); };

    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#ff7f0e", "#8c564b",
                                    "#17becf", "#7f7f7f"};
    const int ncolors = 8;

    std::ofstream out(path);
    if (!out) throw Error("cannot open for write: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
        << "\" height=\"" << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << ml << "\" y=\"24\" font-family=\"sans-serif\" "
        << "font-size=\"15\">" << name_ << "</text>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\""
        << ml + pw << "\" y2=\"" << mt + ph
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
        << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";

    for (int g = 0; g <= 4; ++g) {
      double v = lo + (hi - lo) * g / 4.0;
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.4g", v);
      out << "<text x=\"" << ml - 8 << "\" y=\"" << ypos(v) + 4
          << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
          << "font-size=\"11\">" << buf << "</text>\n";
    }
    for (int c = 0; c < col_count(); ++c)
      out << "<text x=\"" << xpos(c) << "\" y=\"" << mt + ph + 18
          << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          << "font-size=\"11\">" << cols_[static_cast<std::size_t>(c)]
          << "</text>\n";

    for (int r = 0; r < row_count(); ++r) {
      const char* color = kColors[r % ncolors];
      out << "<polyline fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"1.5\" points=\"";
      for (int c = 0; c < col_count(); ++c) {
        if (cell(r, c).count() == 0) continue;
        out << xpos(c) << "," << ypos(cell(r, c).mean()) << " ";
      }
      out << "\"/>\n";
      for (int c = 0; c < col_count(); ++c) {
        const CellStat& s = cell(r, c);
        if (s.count() == 0) continue;
        out << "<line x1=\"" << xpos(c) << "\" y1=\""
            << ypos(s.mean() - s.sd()) << "\" x2=\"" << xpos(c)
            << "\" y2=\"" << ypos(s.mean() + s.sd()) << "\" stroke=\""
            << color << "\"/>\n";
        out << "<circle cx=\"" << xpos(c) << "\" cy=\"" << ypos(s.mean())
            << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
      }
      out << "<text x=\"" << ml + pw + 12 << "\" y=\"" << mt + 14 + 16 * r
          << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\""
          << color << "\">" << rows_[static_cast<std::size_t>(r)]
          << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw Error("write failed: " + path);
  }

 private:
  void check(int r, int c) const {
    if (r < 0 || r >= row_count() || c < 0 || c >= col_count())
      throw ConfigError("table index out of range");
  }

  std::string name_;
  std::vector<std::string> rows_;
  std::vector<std::string> cols_;
  std::vector<CellStat> cells_;
  std::map<std::string, std::string> provenance_;
};

}  // namespace modalbound
