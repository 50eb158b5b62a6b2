#include "anyssr/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace anyssr {

namespace {

double round4(double v) { return std::round(v * 1e4) / 1e4; }

std::string op_bwt(double op, const std::optional<double>& bwt) {
  return fixed4(op) + "(" + (bwt ? fixed4(*bwt) : std::string("n/a")) + ")";
}

}  // namespace

std::string fixed4(double value) {
  char buf[64];
  // Avoid printing "-0.0000" for values that round to zero.
  const double v = round4(value) == 0.0 ? 0.0 : value;
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

RunReport make_report(const ContinualRun& run) {
  RunReport r{run.phase_tasks, run.accuracy, run.routing, std::nullopt, std::nullopt};
  const Index k = run.accuracy.size();
  if (k >= 1 && run.accuracy.column_complete(k - 1)) {
    r.op = compute_op(run.accuracy);
    if (k >= 2) r.bwt = compute_bwt(run.accuracy);
  }
  return r;
}

std::string format_table(const RunReport& report) {
  std::ostringstream out;
  const Index k = report.accuracy.size();
  out << "Accuracy matrix (row: task learned in phase i, column: after phase t)\n";
  out << std::setw(12) << "phase/task";
  for (Index t = 0; t < k; ++t) out << std::setw(9) << ("t=" + std::to_string(t));
  out << '\n';
  for (Index i = 0; i < k; ++i) {
    out << std::setw(12) << (std::to_string(i) + "/" + std::to_string(report.phase_tasks[static_cast<std::size_t>(i)]));
    for (Index t = 0; t < k; ++t) {
      const auto v = report.accuracy.at(i, t);
      out << std::setw(9) << (v ? fixed4(*v) : std::string("."));
    }
    out << '\n';
  }
  out << "OP:  " << (report.op ? fixed4(*report.op) : std::string("n/a (run incomplete)")) << '\n';
  if (report.bwt) {
    out << "BWT: " << fixed4(*report.bwt) << '\n';
  } else {
    out << "BWT: n/a (needs a complete run with at least two tasks)\n";
  }
  out << "Routing accuracy per phase (average over seen tasks)\n";
  for (std::size_t p = 0; p < report.routing.average.size(); ++p) {
    out << "  phase " << p << ": " << fixed4(report.routing.average[p]) << "  [";
    for (std::size_t i = 0; i < report.routing.per_task[p].size(); ++i) {
      out << (i ? " " : "") << fixed4(report.routing.per_task[p][i]);
    }
    out << "]\n";
  }
  return out.str();
}

std::string accuracy_csv(const RunReport& report) {
  std::ostringstream out;
  const Index k = report.accuracy.size();
  out << "phase,task_id";
  for (Index t = 0; t < k; ++t) out << ",after_phase_" << t;
  out << '\n';
  for (Index i = 0; i < k; ++i) {
    out << i << ',' << report.phase_tasks[static_cast<std::size_t>(i)];
    for (Index t = 0; t < k; ++t) {
      out << ',';
      if (const auto v = report.accuracy.at(i, t)) out << fixed4(*v);
    }
    out << '\n';
  }
  return out.str();
}

std::string routing_csv(const RunReport& report) {
  std::ostringstream out;
  out << "after_phase,task_phase,task_id,routing_accuracy\n";
  for (std::size_t p = 0; p < report.routing.per_task.size(); ++p) {
    for (std::size_t i = 0; i < report.routing.per_task[p].size(); ++i) {
      out << p << ',' << i << ',' << report.phase_tasks[i] << ',' << fixed4(report.routing.per_task[p][i]) << '\n';
    }
  }
  return out.str();
}

std::string metrics_csv(const RunReport& report) {
  std::ostringstream out;
  out << "metric,value\n";
  if (report.op) out << "op," << fixed4(*report.op) << '\n';
  if (report.bwt) out << "bwt," << fixed4(*report.bwt) << '\n';
  for (std::size_t p = 0; p < report.routing.average.size(); ++p) {
    out << "routing_average_phase_" << p << ',' << fixed4(report.routing.average[p]) << '\n';
  }
  return out.str();
}

std::string report_json(const RunReport& report) {
  using nlohmann::json;
  const Index k = report.accuracy.size();
  json accuracy = json::array();
  for (Index i = 0; i < k; ++i) {
    json row = json::array();
    for (Index t = 0; t < k; ++t) {
      const auto v = report.accuracy.at(i, t);
      row.push_back(v ? json(round4(*v)) : json(nullptr));
    }
    accuracy.push_back(std::move(row));
  }
  json per_task = json::array();
  for (const auto& phase : report.routing.per_task) {
    json row = json::array();
    for (double v : phase) row.push_back(round4(v));
    per_task.push_back(std::move(row));
  }
  json average = json::array();
  for (double v : report.routing.average) average.push_back(round4(v));
  json doc = {{"tasks", k},
              {"phase_tasks", report.phase_tasks},
              {"accuracy", std::move(accuracy)},
              {"routing", {{"per_task", std::move(per_task)}, {"average", std::move(average)}}}};
  if (report.op) doc["op"] = round4(*report.op);
  if (report.bwt) doc["bwt"] = round4(*report.bwt);
  return doc.dump(2) + "\n";
}

void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_report(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text_atomic(dir / "report.txt", format_table(report));
  write_text_atomic(dir / "accuracy_matrix.csv", accuracy_csv(report));
  write_text_atomic(dir / "routing_trace.csv", routing_csv(report));
  write_text_atomic(dir / "metrics.csv", metrics_csv(report));
  write_text_atomic(dir / "report.json", report_json(report));
}

std::string format_sweep(const SweepResult& sweep) {
  std::ostringstream out;
  out << "OP(BWT) by split layer (rows) and expansion size (columns)\n";
  out << std::setw(8) << "L_f";
  for (Index e : sweep.expanded_dims) out << std::setw(20) << ("E=" + std::to_string(e));
  out << '\n';
  std::size_t c = 0;
  for (Index l : sweep.split_layers) {
    out << std::setw(8) << l;
    for (std::size_t j = 0; j < sweep.expanded_dims.size(); ++j, ++c) {
      out << std::setw(20) << op_bwt(sweep.cells[c].op, sweep.cells[c].bwt);
    }
    out << '\n';
  }
  return out.str();
}

std::string sweep_csv(const SweepResult& sweep) {
  std::ostringstream out;
  out << "split_layer,expanded_dim,op,bwt\n";
  for (const auto& cell : sweep.cells) {
    out << cell.split_layer << ',' << cell.expanded_dim << ',' << fixed4(cell.op) << ','
        << (cell.bwt ? fixed4(*cell.bwt) : std::string()) << '\n';
  }
  return out.str();
}

}  // namespace anyssr
