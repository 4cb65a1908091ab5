#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hoplab/common.hpp"

namespace hoplab::trainer {

struct MetricsRow {
  std::uint64_t step = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double id_test_accuracy = 0;
  double ood_accuracy = 0;
  double bridge_rate_among_correct = 0;
  double bridge_rate_overall = 0;
  double mixed_hop1_accuracy = 0;
  double mixed_hop2_accuracy = 0;
  double wall_clock_seconds = 0;
};

inline constexpr const char* kMetricsHeader =
    "step,train_loss,train_accuracy,id_test_accuracy,ood_accuracy,"
    "bridge_rate_among_correct,bridge_rate_overall,mixed_hop1_accuracy,"
    "mixed_hop2_accuracy,wall_clock_seconds";

struct FinetuneMetricsRow {
  std::uint64_t step = 0;
  double train_loss = 0;
  double retained_atomic_accuracy = 0;
  double new_hop1_accuracy = 0;
  double new_hop1_bridge_rate = 0;
  double new_hop2_accuracy = 0;
  double new_hop2_bridge_rate = 0;
  double new_both_accuracy = 0;
  double new_both_bridge_rate = 0;
  double wall_clock_seconds = 0;
};

inline constexpr const char* kFinetuneMetricsHeader =
    "step,train_loss,retained_atomic_accuracy,new_hop1_accuracy,"
    "new_hop1_bridge_rate,new_hop2_accuracy,new_hop2_bridge_rate,"
    "new_both_accuracy,new_both_bridge_rate,wall_clock_seconds";

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

// Append-only CSV writer; flushes each row so long runs can be tailed.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, const char* header)
      : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
    if (!out_) throw IoError("cannot write " + path_);
    out_ << header << '\n';
    out_.flush();
  }

  void append(const MetricsRow& r) {
    out_ << r.step << ',' << detail::fmt(r.train_loss) << ','
         << detail::fmt(r.train_accuracy) << ','
         << detail::fmt(r.id_test_accuracy) << ','
         << detail::fmt(r.ood_accuracy) << ','
         << detail::fmt(r.bridge_rate_among_correct) << ','
         << detail::fmt(r.bridge_rate_overall) << ','
         << detail::fmt(r.mixed_hop1_accuracy) << ','
         << detail::fmt(r.mixed_hop2_accuracy) << ','
         << detail::fmt(r.wall_clock_seconds) << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_);
  }

  void append(const FinetuneMetricsRow& r) {
    out_ << r.step << ',' << detail::fmt(r.train_loss) << ','
         << detail::fmt(r.retained_atomic_accuracy) << ','
         << detail::fmt(r.new_hop1_accuracy) << ','
         << detail::fmt(r.new_hop1_bridge_rate) << ','
         << detail::fmt(r.new_hop2_accuracy) << ','
         << detail::fmt(r.new_hop2_bridge_rate) << ','
         << detail::fmt(r.new_both_accuracy) << ','
         << detail::fmt(r.new_both_bridge_rate) << ','
         << detail::fmt(r.wall_clock_seconds) << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_);
  }

 private:
  std::ofstream out_;
  std::string path_;
};

// Loaded metrics file: header names plus all rows as doubles (step included
// as column 0; exact for the step ranges used here).
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column_index(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ParseError("metrics file has no column '" + name + "'");
  }
};

inline CsvTable load_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line) || line.empty())
    throw ParseError(path.string() + ":1: missing header row");
  ++line_no;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      table.columns.push_back(line.substr(start));
      break;
    }
    table.columns.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(table.columns.size());
    start = 0;
    while (start <= line.size()) {
      std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) pos = line.size();
      const std::string field = line.substr(start, pos - start);
      char* endp = nullptr;
      const double v = std::strtod(field.c_str(), &endp);
      if (endp != field.c_str() + field.size() || field.empty())
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": bad numeric field '" + field + "'");
      row.push_back(v);
      start = pos + 1;
    }
    if (row.size() != table.columns.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected " + std::to_string(table.columns.size()) +
                       " fields, got " + std::to_string(row.size()));
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace hoplab::trainer
