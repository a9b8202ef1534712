#pragma once

// The scenario-matrix report: per-run rows, seed aggregates, and emission as
// csv/json (lossless) or markdown (human-readable grid).

#include <cstdint>
#include <string>
#include <vector>

namespace msplab {

struct ReportRow {
  std::string train_scenario;
  std::string eval_scenario;
  std::string strategy;
  uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  bool flagged = false;  // metric hit a zero-division convention

  bool operator==(const ReportRow&) const = default;
};

struct Report {
  std::vector<ReportRow> rows;

  // DataError when empty, when a (train, eval, strategy, seed) cell repeats,
  // or when a value leaves [0,1].
  void validate() const;

  bool operator==(const Report&) const = default;
};

// Mean and spread over seeds for one (train, eval, strategy, metric) group.
// std is the sample standard deviation (n-1), 0 for singleton groups.
struct AggregateCell {
  std::string train_scenario;
  std::string eval_scenario;
  std::string strategy;
  std::string metric;
  int n = 0;
  double mean = 0.0;
  double stddev = 0.0;
  bool flagged = false;  // any contributing row was flagged
};

// Groups in first-appearance order; deterministic for a fixed row order.
std::vector<AggregateCell> aggregate(const Report& report);

enum class ReportFormat { csv, json, markdown };
ReportFormat parse_format(const std::string& token);  // ConfigError on unknown tokens
std::string to_string(ReportFormat fmt);

// csv/json carry every row at full precision; markdown renders one
// train x eval grid per (strategy, metric) with the best strategy's mean
// bolded in each grid position.
std::string render_report(const Report& report, ReportFormat fmt);
void emit_report(const Report& report, ReportFormat fmt, const std::string& path);

Report report_from_json(const std::string& text);  // DataError on malformed input
Report report_from_csv(const std::string& text);   // DataError on malformed input

std::string read_text_file(const std::string& path);                       // DataError
void write_text_file(const std::string& path, const std::string& content);  // DataError

}  // namespace msplab
