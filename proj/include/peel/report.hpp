#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace peel {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Plain comma-separated text without quoting; every row must match the
// header width.
CsvTable ParseCsv(const std::string& text);

enum class DeltaSign { kImproved, kRegressed, kTied };
const char* DeltaSignName(DeltaSign sign);

struct MetricDelta {
  std::size_t row = 0;
  std::string column;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b - a
  DeltaSign sign = DeltaSign::kTied;
};

struct CompareSummary {
  std::vector<MetricDelta> deltas;
  std::size_t improved = 0;
  std::size_t regressed = 0;
  std::size_t tied = 0;
};

// Row-by-row deltas of B against A for every cell that is numeric in both
// reports. Columns whose name ends in "Micros" are lower-is-better; all
// others higher-is-better.
// Differing headers or row counts raise a schema-mismatch error.
CompareSummary CompareRuns(const CsvTable& a, const CsvTable& b);
CompareSummary CompareRunFiles(const std::string& path_a, const std::string& path_b);

// row,metric,a,b,delta,sign lines followed by a summary line.
std::string FormatCompare(const CompareSummary& summary);

}  // namespace peel
