#include "peel/report.hpp"

#include <cstdio>
#include <sstream>

#include "peel/binary_io.hpp"
#include "peel/config.hpp"
#include "peel/error.hpp"

namespace peel {
namespace {

std::vector<std::string> SplitRow(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(TrimText(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool ToNumber(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size();
}

bool EndsWith(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

CsvTable ParseCsv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = SplitRow(line);
    if (table.header.empty()) {
      table.header = std::move(cells);
      continue;
    }
    Require(cells.size() == table.header.size(), ErrorKind::kParse,
            "row " + std::to_string(table.rows.size() + 1) + " has " + std::to_string(cells.size()) +
                " cells, header has " + std::to_string(table.header.size()));
    table.rows.push_back(std::move(cells));
  }
  Require(!table.header.empty(), ErrorKind::kParse, "empty report");
  return table;
}

const char* DeltaSignName(DeltaSign sign) {
  switch (sign) {
    case DeltaSign::kImproved: return "improved";
    case DeltaSign::kRegressed: return "regressed";
    case DeltaSign::kTied: return "tied";
  }
  return "tied";
}

CompareSummary CompareRuns(const CsvTable& a, const CsvTable& b) {
  if (a.header != b.header) {
    std::string missing;
    for (const auto& col : a.header) {
      bool found = false;
      for (const auto& other : b.header) found = found || other == col;
      if (!found) missing += (missing.empty() ? "" : ",") + col;
    }
    Fail(ErrorKind::kSchemaMismatch,
         missing.empty() ? "report headers differ" : "columns missing in second report: " + missing);
  }
  Require(a.rows.size() == b.rows.size(), ErrorKind::kSchemaMismatch,
          "reports have different row counts (" + std::to_string(a.rows.size()) + " vs " +
              std::to_string(b.rows.size()) + ")");
  CompareSummary summary;
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    for (std::size_t c = 0; c < a.header.size(); ++c) {
      MetricDelta d;
      if (!ToNumber(a.rows[r][c], d.a) || !ToNumber(b.rows[r][c], d.b)) continue;
      d.row = r;
      d.column = a.header[c];
      d.delta = d.b - d.a;
      const bool lower_better = EndsWith(d.column, "Micros");
      if (d.delta == 0.0) {
        d.sign = DeltaSign::kTied;
        ++summary.tied;
      } else if ((d.delta > 0.0) != lower_better) {
        d.sign = DeltaSign::kImproved;
        ++summary.improved;
      } else {
        d.sign = DeltaSign::kRegressed;
        ++summary.regressed;
      }
      summary.deltas.push_back(d);
    }
  }
  return summary;
}

CompareSummary CompareRunFiles(const std::string& path_a, const std::string& path_b) {
  return CompareRuns(ParseCsv(ReadFileText(path_a)), ParseCsv(ReadFileText(path_b)));
}

std::string FormatCompare(const CompareSummary& summary) {
  std::ostringstream out;
  out << "row,metric,a,b,delta,sign\n";
  char buf[64];
  for (const auto& d : summary.deltas) {
    out << d.row << ',' << d.column << ',';
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%+.6f", d.a, d.b, d.delta);
    out << buf << ',' << DeltaSignName(d.sign) << '\n';
  }
  out << "# improved=" << summary.improved << " regressed=" << summary.regressed
      << " tied=" << summary.tied << '\n';
  return out.str();
}

}  // namespace peel
