#include "dml/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace dml {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string fixed2(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // Column widths count code points so "±" lines up.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return cps >= width ? s : s + std::string(width - cps, ' ');
}

}  // namespace

nlohmann::ordered_json to_json(const ExperimentReport& report) {
  nlohmann::ordered_json j;
  j["master_seed"] = report.master_seed;
  j["n_folds"] = report.n_folds;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["label"] = r.label;
    row["loss"] = r.loss;
    row["blended"] = r.blended;
    row["dataset"] = r.dataset;
    row["shots"] = r.shots;
    row["mean"] = r.mean;
    row["std"] = r.stddev;
    row["p_value"] = r.p_value ? nlohmann::ordered_json(*r.p_value) : nlohmann::ordered_json(nullptr);
    row["starred"] = r.starred;
    row["hyperparameters"] = r.hyperparameters;
    row["grid_points"] = r.grid_points;
    row["failed_points"] = r.failed_points;
    row["fold_scores"] = r.fold_scores;
    j["rows"].push_back(std::move(row));
  }
  j["decisions"] = report.decisions;
  return j;
}

ExperimentReport report_from_json(const nlohmann::ordered_json& j) {
  try {
    ExperimentReport report;
    report.master_seed = j.at("master_seed").get<std::uint64_t>();
    report.n_folds = j.at("n_folds").get<int>();
    for (const auto& row : j.at("rows")) {
      ReportRow r;
      r.label = row.at("label").get<std::string>();
      r.loss = row.at("loss").get<std::string>();
      r.blended = row.at("blended").get<bool>();
      r.dataset = row.at("dataset").get<std::string>();
      r.shots = row.at("shots").get<std::string>();
      r.mean = row.at("mean").get<double>();
      r.stddev = row.at("std").get<double>();
      if (!row.at("p_value").is_null()) r.p_value = row.at("p_value").get<double>();
      r.starred = row.at("starred").get<bool>();
      r.hyperparameters = row.at("hyperparameters");
      r.grid_points = row.at("grid_points").get<int>();
      r.failed_points = row.at("failed_points").get<int>();
      r.fold_scores = row.at("fold_scores").get<std::vector<double>>();
      report.rows.push_back(std::move(r));
    }
    report.decisions = j.at("decisions");
    return report;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("report JSON: ") + e.what());
  }
}

std::string dump_report(const ExperimentReport& report) { return to_json(report).dump(2) + "\n"; }

std::string format_cell(double mean, double stddev, bool starred) {
  return fixed2(100.0 * mean) + "±" + fixed2(100.0 * stddev) + (starred ? "*" : "");
}

std::string render_table(std::span<const ExperimentReport> reports) {
  std::vector<std::string> datasets;
  std::vector<std::string> labels;
  std::map<std::pair<std::string, std::string>, const ReportRow*> cells;
  for (const auto& report : reports) {
    for (const auto& row : report.rows) {
      if (std::find(datasets.begin(), datasets.end(), row.dataset) == datasets.end()) datasets.push_back(row.dataset);
      if (std::find(labels.begin(), labels.end(), row.label) == labels.end()) labels.push_back(row.label);
      cells[{row.label, row.dataset}] = &row;
    }
  }
  std::vector<std::vector<std::string>> table;
  std::vector<std::string> header{"Loss"};
  header.insert(header.end(), datasets.begin(), datasets.end());
  header.push_back("Avg");
  table.push_back(header);
  for (const auto& label : labels) {
    std::vector<std::string> line{label};
    double sum = 0;
    int count = 0;
    for (const auto& ds : datasets) {
      auto it = cells.find({label, ds});
      if (it == cells.end()) {
        line.push_back("-");
      } else if (it->second->fold_scores.empty()) {
        line.push_back("failed");
      } else {
        const ReportRow& r = *it->second;
        line.push_back(format_cell(r.mean, r.stddev, r.starred));
        sum += r.mean;
        ++count;
      }
    }
    line.push_back(count ? fixed2(100.0 * sum / count) : "-");
    table.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      std::size_t cps = 0;
      for (unsigned char ch : line[c]) cps += (ch & 0xC0) != 0x80;
      width[c] = std::max(width[c], cps);
    }
  }
  std::ostringstream out;
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      out << (c + 1 == line.size() ? line[c] : pad(line[c], width[c] + 2));
    }
    out << '\n';
  }
  return out.str();
}

std::string render_csv(std::span<const ExperimentReport> reports) {
  std::ostringstream out;
  out << "label,loss,blended,dataset,shots,fold,f1\n";
  char buf[64];
  for (const auto& report : reports) {
    for (const auto& row : report.rows) {
      for (std::size_t f = 0; f < row.fold_scores.size(); ++f) {
        std::snprintf(buf, sizeof buf, "%.17g", row.fold_scores[f]);
        out << '"' << row.label << "\"," << row.loss << ',' << (row.blended ? 1 : 0) << ',' << row.dataset << ','
            << row.shots << ',' << f << ',' << buf << '\n';
      }
    }
  }
  return out.str();
}

void emit_report(const ExperimentReport& report, const std::filesystem::path& prefix) {
  const std::span<const ExperimentReport> one(&report, 1);
  auto with_ext = [&](const char* ext) {
    std::filesystem::path p = prefix;
    p += ext;
    return p;
  };
  if (const auto dir = prefix.parent_path(); !dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  }
  write_text(with_ext(".json"), dump_report(report));
  write_text(with_ext(".txt"), render_table(one));
  write_text(with_ext(".csv"), render_csv(one));
}

ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report " + path.string());
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace dml
