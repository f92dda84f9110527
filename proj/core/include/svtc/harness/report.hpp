#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/circuits/circuits.hpp"
#include "svtc/common/image.hpp"

namespace svtc {

enum class ReportSchema : std::uint8_t { main_table, controls_table, sweep_table, probe_trajectory, interference };

inline constexpr ReportSchema kAllSchemas[] = {ReportSchema::main_table, ReportSchema::controls_table,
                                               ReportSchema::sweep_table, ReportSchema::probe_trajectory,
                                               ReportSchema::interference};

std::string_view to_string(ReportSchema s);
ReportSchema parse_report_schema(std::string_view s);
const std::vector<std::string>& schema_columns(ReportSchema s);

// One object per row. Every schema column must be present; null marks a
// cell that was not measured and is written empty.
using ReportRow = nlohmann::ordered_json;

// Throws ValidationError listing every missing (row, column) cell.
void check_complete(const std::vector<ReportRow>& rows, ReportSchema s);
std::string report_csv(const std::vector<ReportRow>& rows, ReportSchema s);
std::string report_jsonl(const std::vector<ReportRow>& rows, ReportSchema s);
// Writes <dir>/<schema>.csv and/or .jsonl and returns the written paths.
std::vector<std::filesystem::path> emit_report(const std::vector<ReportRow>& rows, ReportSchema s,
                                               const std::filesystem::path& dir, bool csv = true, bool jsonl = true);

// Fixed perceptually ordered palette, index 0 darkest.
Rgb heat_color(double t);
// Each cell becomes a cell_pixels square; values are scaled by the map maximum.
Image render_heatmap(const SpatialMap& map, int cell_pixels = 32);
void plot_heatmap(const SpatialMap& map, const std::filesystem::path& path, int cell_pixels = 32);

} // namespace svtc
