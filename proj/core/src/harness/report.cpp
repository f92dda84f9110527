#include "svtc/harness/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "svtc/common/error.hpp"

namespace svtc {

std::string_view to_string(ReportSchema s) {
    switch (s) {
    case ReportSchema::main_table: return "main_table";
    case ReportSchema::controls_table: return "controls_table";
    case ReportSchema::sweep_table: return "sweep_table";
    case ReportSchema::probe_trajectory: return "probe_trajectory";
    case ReportSchema::interference: return "interference";
    }
    return "?";
}

ReportSchema parse_report_schema(std::string_view s) {
    for (auto k : kAllSchemas) {
        if (to_string(k) == s) return k;
    }
    throw ValidationError("unknown report schema '" + std::string(s) + "'");
}

const std::vector<std::string>& schema_columns(ReportSchema s) {
    static const std::vector<std::string> main{"config", "base", "delta_pp", "chg_pct", "rel_perturbation", "n", "seed"};
    static const std::vector<std::string> controls{"config",   "base",    "delta_pp_mean",    "delta_pp_std", "chg_mean",
                                                   "chg_std", "rel_perturbation", "n", "seed"};
    static const std::vector<std::string> sweep{"layer",   "scale",            "config", "base", "delta_pp",
                                                "chg_pct", "rel_perturbation", "n",      "seed"};
    static const std::vector<std::string> probe{"layer", "mean_acc", "std_acc", "shuffled_acc"};
    static const std::vector<std::string> interference{"rho",          "fraction_negative_pairs", "union_norm_ratio",
                                                       "p_g_given_p",  "norm_pattern",            "norm_global",
                                                       "norm_union"};
    switch (s) {
    case ReportSchema::main_table: return main;
    case ReportSchema::controls_table: return controls;
    case ReportSchema::sweep_table: return sweep;
    case ReportSchema::probe_trajectory: return probe;
    case ReportSchema::interference: return interference;
    }
    return main;
}

void check_complete(const std::vector<ReportRow>& rows, ReportSchema s) {
    std::string missing;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (const auto& col : schema_columns(s)) {
            if (!rows[r].is_object() || !rows[r].contains(col)) {
                missing += (missing.empty() ? "" : ", ") + ("row " + std::to_string(r) + " '" + col + "'");
            }
        }
    }
    if (!missing.empty()) {
        throw ValidationError(std::string(to_string(s)) + " is incomplete; missing cells: " + missing);
    }
}

namespace {

std::string csv_cell(const nlohmann::ordered_json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) {
        const auto s = v.get<std::string>();
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + "\"";
    }
    if (v.is_number_float()) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.10g", v.get<double>());
        return buf;
    }
    return v.dump();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

} // namespace

std::string report_csv(const std::vector<ReportRow>& rows, ReportSchema s) {
    check_complete(rows, s);
    const auto& cols = schema_columns(s);
    std::string out;
    for (std::size_t c = 0; c < cols.size(); ++c) out += (c ? "," : "") + cols[c];
    out += '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < cols.size(); ++c) out += (c ? "," : "") + csv_cell(row.at(cols[c]));
        out += '\n';
    }
    return out;
}

std::string report_jsonl(const std::vector<ReportRow>& rows, ReportSchema s) {
    check_complete(rows, s);
    std::string out;
    for (const auto& row : rows) {
        nlohmann::ordered_json o;
        for (const auto& col : schema_columns(s)) o[col] = row.at(col);
        out += o.dump() + '\n';
    }
    return out;
}

std::vector<std::filesystem::path> emit_report(const std::vector<ReportRow>& rows, ReportSchema s,
                                               const std::filesystem::path& dir, bool csv, bool jsonl) {
    check_complete(rows, s);
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> written;
    const std::string stem(to_string(s));
    if (csv) {
        written.push_back(dir / (stem + ".csv"));
        write_text(written.back(), report_csv(rows, s));
    }
    if (jsonl) {
        written.push_back(dir / (stem + ".jsonl"));
        write_text(written.back(), report_jsonl(rows, s));
    }
    return written;
}

Rgb heat_color(double t) {
    // Viridis anchor colors at t = 0, 1/8, ..., 1.
    static constexpr std::array<std::array<double, 3>, 9> anchors{{{68, 1, 84},
                                                                   {71, 44, 122},
                                                                   {59, 81, 139},
                                                                   {44, 113, 142},
                                                                   {33, 144, 141},
                                                                   {39, 173, 129},
                                                                   {92, 200, 99},
                                                                   {170, 220, 50},
                                                                   {253, 231, 37}}};
    if (!(t > 0.0)) t = 0.0;
    if (t > 1.0) t = 1.0;
    const double x = t * 8.0;
    const int i = std::min(7, static_cast<int>(x));
    const double f = x - i;
    Rgb c{};
    for (int k = 0; k < 3; ++k) {
        const double v = anchors[static_cast<size_t>(i)][static_cast<size_t>(k)] * (1.0 - f) +
                         anchors[static_cast<size_t>(i + 1)][static_cast<size_t>(k)] * f;
        c[static_cast<size_t>(k)] = static_cast<std::uint8_t>(std::lround(v));
    }
    return c;
}

Image render_heatmap(const SpatialMap& map, int cell_pixels) {
    if (map.height <= 0 || map.width <= 0 || cell_pixels <= 0 ||
        map.values.size() != static_cast<size_t>(map.height * map.width)) {
        throw ValidationError("heatmap: map shape is inconsistent");
    }
    double mx = 0.0;
    for (double v : map.values) {
        if (!std::isfinite(v)) throw ValidationError("heatmap: non-finite value");
        mx = std::max(mx, v);
    }
    Image img(map.width * cell_pixels, map.height * cell_pixels, heat_color(0.0));
    for (int r = 0; r < map.height; ++r) {
        for (int c = 0; c < map.width; ++c) {
            const double t = mx > 0.0 ? map.at(r, c) / mx : 0.0;
            img.fill_rect(c * cell_pixels, r * cell_pixels, (c + 1) * cell_pixels, (r + 1) * cell_pixels,
                          heat_color(t));
        }
    }
    return img;
}

void plot_heatmap(const SpatialMap& map, const std::filesystem::path& path, int cell_pixels) {
    write_png(path, render_heatmap(map, cell_pixels));
}

} // namespace svtc
