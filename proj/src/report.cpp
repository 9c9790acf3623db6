#include "logitfuse/report.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "logitfuse/types.hpp"

namespace logitfuse {

using nlohmann::json;

namespace {

json row_to_json(const ReportRow& row) {
  json doc;
  doc["dataset"] = row.dataset;
  doc["method"] = row.method;
  doc["split"] = row.split;
  doc["accuracy"] = row.accuracy;
  doc["delta_vs_best_single"] = row.delta_vs_best_single;
  if (row.avg_gflops) doc["avg_gflops"] = *row.avg_gflops;
  return doc;
}

std::string trim_number(double v) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << v;
  return out.str();
}

}  // namespace

void save_report_row(const ReportRow& row, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_failure, "cannot write " + path.string());
  out << row_to_json(row).dump(2) << "\n";
}

std::vector<ReportRow> load_report_rows(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw Error(ErrorKind::io_failure, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<ReportRow> rows;
  for (const auto& file : files) {
    std::ifstream in(file);
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw Error(ErrorKind::schema_violation, file.string() + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("dataset") || !doc.contains("method") ||
        !doc.contains("accuracy"))
      throw Error(ErrorKind::schema_violation, file.string() + ": not a report row");
    ReportRow row;
    row.dataset = doc["dataset"].get<std::string>();
    row.method = doc["method"].get<std::string>();
    row.split = doc.value("split", "");
    row.accuracy = doc["accuracy"].get<double>();
    row.delta_vs_best_single = doc.value("delta_vs_best_single", 0.0);
    if (doc.contains("avg_gflops")) row.avg_gflops = doc["avg_gflops"].get<double>();
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return a.dataset != b.dataset ? a.dataset < b.dataset : a.method < b.method;
  });
  return rows;
}

ReportSummary summarize(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw Error(ErrorKind::empty_list, "no report rows to summarize");
  ReportSummary s;
  s.min_delta = rows[0].delta_vs_best_single;
  s.max_delta = rows[0].delta_vs_best_single;
  double total = 0.0;
  for (const auto& row : rows) {
    total += row.delta_vs_best_single;
    s.min_delta = std::min(s.min_delta, row.delta_vs_best_single);
    s.max_delta = std::max(s.max_delta, row.delta_vs_best_single);
  }
  s.mean_delta = total / static_cast<double>(rows.size());
  return s;
}

std::string format_csv(const std::vector<ReportRow>& rows) {
  std::string out = "dataset,method,split,accuracy,delta_vs_best_single,avg_gflops\n";
  for (const auto& row : rows) {
    out += row.dataset + "," + row.method + "," + row.split + "," + trim_number(row.accuracy) +
           "," + trim_number(row.delta_vs_best_single) + "," +
           (row.avg_gflops ? trim_number(*row.avg_gflops) : "") + "\n";
  }
  return out;
}

std::string format_json(const std::vector<ReportRow>& rows) {
  json doc = json::array();
  for (const auto& row : rows) doc.push_back(row_to_json(row));
  json wrapper;
  wrapper["rows"] = doc;
  if (!rows.empty()) {
    const ReportSummary s = summarize(rows);
    wrapper["summary"] = {{"mean_delta", s.mean_delta},
                          {"min_delta", s.min_delta},
                          {"max_delta", s.max_delta}};
  }
  return wrapper.dump(2) + "\n";
}

std::string format_markdown(const std::vector<ReportRow>& rows) {
  std::string out =
      "| dataset | method | split | accuracy | delta vs best single | avg GFLOPs |\n"
      "|---|---|---|---|---|---|\n";
  for (const auto& row : rows) {
    out += "| " + row.dataset + " | " + row.method + " | " + row.split + " | " +
           trim_number(row.accuracy) + " | " + trim_number(row.delta_vs_best_single) + " | " +
           (row.avg_gflops ? trim_number(*row.avg_gflops) : "-") + " |\n";
  }
  if (!rows.empty()) {
    const ReportSummary s = summarize(rows);
    out += "\nMean delta " + trim_number(s.mean_delta) + ", min " + trim_number(s.min_delta) +
           ", max " + trim_number(s.max_delta) + "\n";
  }
  return out;
}

}  // namespace logitfuse
