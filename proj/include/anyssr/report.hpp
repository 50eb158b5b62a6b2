#pragma once

// Report emission: fixed-width text tables for people, CSV and JSON records
// for plotting tools. All reals are printed with four decimals.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anyssr/harness.hpp"

namespace anyssr {

struct RunReport {
  std::vector<TaskId> phase_tasks;
  AccuracyMatrix accuracy;
  RoutingAccuracyTrace routing;
  std::optional<double> op;   // when the final column is complete
  std::optional<double> bwt;  // additionally requires at least two tasks
};

RunReport make_report(const ContinualRun& run);

std::string fixed4(double value);

std::string format_table(const RunReport& report);
std::string accuracy_csv(const RunReport& report);
std::string routing_csv(const RunReport& report);
std::string metrics_csv(const RunReport& report);
std::string report_json(const RunReport& report);

/// Writes report.txt, accuracy_matrix.csv, routing_trace.csv, metrics.csv and
/// report.json into `dir`.
void write_report(const RunReport& report, const std::filesystem::path& dir);

std::string format_sweep(const SweepResult& sweep);
std::string sweep_csv(const SweepResult& sweep);

/// Writes via a temporary sibling and rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace anyssr
