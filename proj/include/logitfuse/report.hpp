#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace logitfuse {

// One evaluated (dataset, method, split) result. delta is accuracy minus
// the best single backbone on the same split.
struct ReportRow {
  std::string dataset;
  std::string method;
  std::string split;
  double accuracy = 0.0;
  double delta_vs_best_single = 0.0;
  std::optional<double> avg_gflops;
};

void save_report_row(const ReportRow& row, const std::filesystem::path& path);

// Reads every *.json report row under dir (sorted by path), then sorts rows
// by (dataset, method) so output is stable across runs.
std::vector<ReportRow> load_report_rows(const std::filesystem::path& dir);

struct ReportSummary {
  double mean_delta = 0.0;
  double min_delta = 0.0;
  double max_delta = 0.0;
};

ReportSummary summarize(const std::vector<ReportRow>& rows);

std::string format_csv(const std::vector<ReportRow>& rows);
std::string format_json(const std::vector<ReportRow>& rows);
std::string format_markdown(const std::vector<ReportRow>& rows);

}  // namespace logitfuse
