#pragma once

#include <filesystem>
#include <span>
#include <string>

#include "dml/grid.hpp"

#include "json.hpp"

namespace dml {

nlohmann::ordered_json to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::ordered_json& j);

/// Serialized report text: two-space indented JSON with a trailing newline.
std::string dump_report(const ExperimentReport& report);

/// "mean±std" in percent with two decimals, plus "*" when starred.
std::string format_cell(double mean, double stddev, bool starred);

/// Losses as rows, datasets as columns, with a trailing Avg column.
/// Reports for several datasets (same shot size) merge into one table.
std::string render_table(std::span<const ExperimentReport> reports);

/// Per-fold scores: one line per (row, fold).
std::string render_csv(std::span<const ExperimentReport> reports);

/// Writes <prefix>.json, <prefix>.txt and <prefix>.csv.
void emit_report(const ExperimentReport& report, const std::filesystem::path& prefix);

ExperimentReport load_report(const std::filesystem::path& path);

}  // namespace dml
