#include "svtc/datagen/validator.hpp"

#include <algorithm>
#include <fstream>
#include <optional>

#include "svtc/common/error.hpp"
#include "svtc/common/parallel.hpp"

namespace svtc {

namespace {

using json = nlohmann::json;

struct Obj {
    std::string shape;
    std::string color;
    std::string size;
    int x = 0;
    int y = 0;
};

struct Filter {
    std::optional<std::string> shape, color, size, exclude_color;

    bool accepts(const Obj& o) const {
        return (!shape || *shape == o.shape) && (!color || *color == o.color) && (!size || *size == o.size) &&
               (!exclude_color || *exclude_color != o.color);
    }
};

[[noreturn]] void malformed(const std::string& field, const std::string& why) {
    throw ValidationError("metadata field '" + field + "': " + why);
}

const json& need(const json& j, const char* key, const std::string& path) {
    if (!j.is_object() || !j.contains(key)) malformed(path + "." + key, "missing");
    return j.at(key);
}

std::string need_string(const json& j, const char* key, const std::string& path) {
    const auto& v = need(j, key, path);
    if (!v.is_string()) malformed(path + "." + key, "expected string");
    return v.get<std::string>();
}

std::optional<std::string> opt_string(const json& j, const char* key, const std::string& path) {
    const auto& v = need(j, key, path);
    if (v.is_null()) return std::nullopt;
    if (!v.is_string()) malformed(path + "." + key, "expected string or null");
    return v.get<std::string>();
}

Filter read_filter(const json& j, const std::string& path) {
    return {opt_string(j, "shape", path), opt_string(j, "color", path), opt_string(j, "size", path),
            opt_string(j, "exclude_color", path)};
}

std::vector<Obj> read_objects(const json& scene) {
    std::vector<Obj> out;
    const auto& arr = need(scene, "objects", "metadata.scene");
    if (!arr.is_array()) malformed("metadata.scene.objects", "expected array");
    for (size_t i = 0; i < arr.size(); ++i) {
        const std::string p = "metadata.scene.objects[" + std::to_string(i) + "]";
        Obj o;
        o.shape = need_string(arr[i], "shape", p);
        o.color = need_string(arr[i], "color", p);
        o.size = need_string(arr[i], "size", p);
        const auto& cell = need(arr[i], "cell", p);
        if (!cell.is_array() || cell.size() != 2) malformed(p + ".cell", "expected [x, y]");
        o.x = cell[0].get<int>();
        o.y = cell[1].get<int>();
        out.push_back(o);
    }
    return out;
}

long tally(const std::vector<Obj>& objs, const Filter& f) {
    long n = 0;
    for (const auto& o : objs) n += f.accepts(o);
    return n;
}

bool related(const std::string& rel, const Obj& a, const Obj& b, const std::string& path) {
    if (rel == "left_of") return a.x < b.x;
    if (rel == "right_of") return a.x > b.x;
    if (rel == "above") return a.y < b.y;
    if (rel == "below") return a.y > b.y;
    if (rel == "directly_above") return a.x == b.x && a.y < b.y;
    malformed(path, "unknown relation '" + rel + "'");
}

// Returns the option text the metadata implies.
std::string solve(const json& record, const Vocabulary& vocab) {
    const auto& meta = need(record, "metadata", "record");
    const auto& scene = need(meta, "scene", "metadata");
    const auto& query = need(meta, "query", "metadata");
    const auto task = need_string(record, "task_type", "record");
    const auto tmpl = need_string(query, "template", "metadata.query");
    const auto objs = read_objects(scene);
    auto yn = [](bool b) { return std::string(b ? "yes" : "no"); };

    if (task == "counting") {
        return std::to_string(tally(objs, read_filter(need(query, "predicate", "metadata.query"), "metadata.query.predicate")));
    }
    if (task == "existence") {
        return yn(tally(objs, read_filter(need(query, "predicate", "metadata.query"), "metadata.query.predicate")) > 0);
    }
    if (task == "comparison") {
        const long l = tally(objs, read_filter(need(query, "left", "metadata.query"), "metadata.query.left"));
        const long r = tally(objs, read_filter(need(query, "right", "metadata.query"), "metadata.query.right"));
        if (tmpl == "more") return yn(l > r);
        if (tmpl == "at_least") return yn(l >= r);
        if (tmpl == "fewer") return yn(l < r);
        malformed("metadata.query.template", "unknown comparison '" + tmpl + "'");
    }
    if (task == "spatial") {
        const auto& links = need(query, "links", "metadata.query");
        if (!links.is_array() || links.empty()) malformed("metadata.query.links", "expected non-empty array");
        bool all = true;
        for (size_t k = 0; k < links.size(); ++k) {
            const std::string p = "metadata.query.links[" + std::to_string(k) + "]";
            const auto rel = need_string(links[k], "relation", p);
            const Filter s = read_filter(need(links[k], "subject", p), p + ".subject");
            const Filter o = read_filter(need(links[k], "object", p), p + ".object");
            if (need_string(links[k], "subject_quantifier", p) == "the" && tally(objs, s) != 1) {
                malformed(p + ".subject", "'the' does not pick out exactly one object");
            }
            if (need_string(links[k], "object_quantifier", p) == "the" && tally(objs, o) != 1) {
                malformed(p + ".object", "'the' does not pick out exactly one object");
            }
            bool any = false;
            for (size_t i = 0; i < objs.size(); ++i) {
                for (size_t j = 0; j < objs.size(); ++j) {
                    if (i != j && s.accepts(objs[i]) && o.accepts(objs[j]) && related(rel, objs[i], objs[j], p)) {
                        any = true;
                    }
                }
            }
            all = all && any;
        }
        return yn(all);
    }
    if (task == "global") {
        if (objs.empty()) malformed("metadata.scene.objects", "global question on an empty scene");
        if (tmpl == "same_color" || tmpl == "same_size") {
            bool same = true;
            for (const auto& o : objs) {
                same = same && (tmpl == "same_color" ? o.color == objs[0].color : o.size == objs[0].size);
            }
            return yn(same);
        }
        const auto& t = need(query, "threshold", "metadata.query");
        if (!t.is_number_integer()) malformed("metadata.query.threshold", "expected integer");
        const long n = static_cast<long>(objs.size());
        const long th = t.get<long>();
        if (tmpl == "more_than") return yn(n > th);
        if (tmpl == "at_most") return yn(n <= th);
        if (tmpl == "at_least") return yn(n >= th);
        malformed("metadata.query.template", "unknown global template '" + tmpl + "'");
    }
    if (task == "attribute_logic") {
        const auto shape = need_string(query, "shape", "metadata.query");
        const auto size = opt_string(query, "size", "metadata.query");
        const auto& colors = need(query, "colors", "metadata.query");
        if (!colors.is_array() || colors.empty()) malformed("metadata.query.colors", "expected non-empty array");
        std::vector<std::string> cs;
        for (const auto& c : colors) cs.push_back(c.get<std::string>());
        auto listed = [&](const std::string& c) { return std::find(cs.begin(), cs.end(), c) != cs.end(); };
        std::vector<Obj> group;
        for (const auto& o : objs) {
            if (o.shape == shape && (!size || *size == o.size)) group.push_back(o);
        }
        if (group.empty()) malformed("metadata.query.shape", "queried shape absent from scene");
        if (tmpl == "not_color" || tmpl == "neither_nor") {
            bool any = false;
            for (const auto& o : group) any = any || !listed(o.color);
            return yn(any);
        }
        if (tmpl == "every_either") {
            bool every = true;
            for (const auto& o : group) every = every && listed(o.color);
            return yn(every);
        }
        malformed("metadata.query.template", "unknown attribute_logic template '" + tmpl + "'");
    }
    if (task == "pattern") {
        const auto& panel = need(scene, "panel", "metadata.scene");
        if (!panel.is_object()) malformed("metadata.scene.panel", "pattern record without panel");
        const auto rule = need_string(panel, "rule", "metadata.scene.panel");
        const auto& mc = need(panel, "masked_cell", "metadata.scene.panel");
        const auto& grid = need(panel, "grid", "metadata.scene.panel");
        if (!mc.is_array() || mc.size() != 2) malformed("metadata.scene.panel.masked_cell", "expected [row, col]");
        const int r = mc[0].get<int>();
        const int c = mc[1].get<int>();
        if (r < 0 || r > 2 || c < 0 || c > 2) malformed("metadata.scene.panel.masked_cell", "out of range");
        if (!grid.is_array() || grid.size() != 3) malformed("metadata.scene.panel.grid", "expected 3x3");
        if (!grid[r][c].is_null()) malformed("metadata.scene.panel.grid", "masked tile is not null");
        std::string id;
        if (rule == "row_repetition") {
            const int other = c == 0 ? 1 : 0;
            const int third = 3 - c - other;
            if (grid[r][other] != grid[r][third]) malformed("metadata.scene.panel.grid", "row is not repeated");
            id = grid[r][other].get<std::string>();
        } else if (rule == "horizontal_symmetry") {
            if (c == 1) malformed("metadata.scene.panel.masked_cell", "center column has no mirror");
            id = grid[r][2 - c].get<std::string>();
        } else {
            malformed("metadata.scene.panel.rule", "unknown rule '" + rule + "'");
        }
        return vocab.color(vocab.color_index(id)).name;
    }
    malformed("task_type", "unknown task '" + task + "'");
}

} // namespace

char recompute_answer(const nlohmann::json& record, const Vocabulary& vocab) {
    const std::string text = solve(record, vocab);
    const auto& options = need(record, "options", "record");
    if (!options.is_array()) malformed("options", "expected array");
    for (const auto& o : options) {
        const auto s = o.get<std::string>();
        if (s.size() >= 3 && s.compare(3, std::string::npos, text) == 0) return s[0];
    }
    malformed("options", "recomputed answer '" + text + "' is not among the options");
}

ValidationReport validate_split(const std::filesystem::path& jsonl, const Vocabulary& vocab, int jobs) {
    std::ifstream in(jsonl);
    if (!in) throw IoError("cannot open " + jsonl.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) lines.push_back(std::move(line));
    }
    ValidationReport report;
    report.entries.resize(lines.size());
    parallel_for(lines.size(), jobs, [&](std::size_t i) {
        auto& e = report.entries[i];
        e.line = i + 1;
        try {
            const auto j = nlohmann::json::parse(lines[i]);
            if (j.contains("id") && j["id"].is_string()) e.id = j["id"].get<std::string>();
            const auto stored = need_string(j, "answer", "record");
            if (stored.size() != 1) malformed("answer", "expected a single letter");
            e.stored = stored[0];
            e.recomputed = recompute_answer(j, vocab);
            e.status = e.recomputed == e.stored ? "ok" : "mismatch";
        } catch (const std::exception& ex) {
            e.status = "parse_failure";
            e.message = ex.what();
        }
    });
    report.records = lines.size();
    for (const auto& e : report.entries) {
        report.mismatches += e.status == "mismatch";
        report.parse_failures += e.status == "parse_failure";
    }
    if (lines.empty()) report.warnings.push_back(jsonl.string() + ": no records");
    return report;
}

} // namespace svtc
