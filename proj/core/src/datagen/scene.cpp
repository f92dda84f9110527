#include "svtc/datagen/scene.hpp"

#include <algorithm>
#include <string>

#include "svtc/common/error.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

std::string_view to_string(ObjectSize s) { return s == ObjectSize::small ? "small" : "large"; }

ObjectSize parse_object_size(std::string_view s) {
    if (s == "small") return ObjectSize::small;
    if (s == "large") return ObjectSize::large;
    throw ValidationError("unknown size '" + std::string(s) + "'");
}

std::string_view to_string(PatternRule r) {
    return r == PatternRule::row_repetition ? "row_repetition" : "horizontal_symmetry";
}

PatternRule parse_pattern_rule(std::string_view s) {
    if (s == "row_repetition") return PatternRule::row_repetition;
    if (s == "horizontal_symmetry") return PatternRule::horizontal_symmetry;
    throw ValidationError("unknown pattern rule '" + std::string(s) + "'");
}

bool cell_in_panel(Cell c) { return c.x >= kPanelOrigin && c.y >= kPanelOrigin; }

nlohmann::ordered_json scene_to_json(const Scene& scene, const Vocabulary& vocab) {
    nlohmann::ordered_json j;
    j["seed"] = scene.seed;
    j["objects"] = nlohmann::ordered_json::array();
    for (const auto& o : scene.objects) {
        const auto& c = vocab.color(o.color);
        j["objects"].push_back({{"shape", vocab.shape(o.shape).id},
                                {"color", c.id},
                                {"hex", rgb_to_hex(c.rgb)},
                                {"size", to_string(o.size)},
                                {"cell", {o.cell.x, o.cell.y}}});
    }
    if (scene.panel) {
        const auto& p = *scene.panel;
        nlohmann::ordered_json grid = nlohmann::ordered_json::array();
        for (int r = 0; r < 3; ++r) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (int c = 0; c < 3; ++c) {
                if (r == p.masked_row && c == p.masked_col) {
                    row.push_back(nullptr);
                } else {
                    row.push_back(vocab.color(p.grid[r][c]).id);
                }
            }
            grid.push_back(std::move(row));
        }
        j["panel"] = {{"rule", to_string(p.rule)},
                      {"masked_cell", {p.masked_row, p.masked_col}},
                      {"grid", std::move(grid)}};
    } else {
        j["panel"] = nullptr;
    }
    return j;
}

std::pair<int, int> object_count_range(const GenConfig& config, TaskType task, Difficulty difficulty) {
    const auto& r = task == TaskType::pattern ? config.pattern_distractors[index_of(difficulty)]
                                              : config.object_counts[index_of(difficulty)];
    return {r.lo, r.hi};
}

namespace {

PatternPanel sample_panel(Rng& rng, Difficulty difficulty, const GenConfig& config) {
    PatternPanel p;
    const double w_sym = config.symmetry_weight[index_of(difficulty)];
    p.rule = bernoulli(rng, w_sym) ? PatternRule::horizontal_symmetry : PatternRule::row_repetition;
    std::vector<int> palette(Vocabulary::kNumColors);
    for (int i = 0; i < Vocabulary::kNumColors; ++i) palette[i] = i;
    if (p.rule == PatternRule::row_repetition) {
        shuffle(palette.begin(), palette.end(), rng);
        for (int r = 0; r < 3; ++r) p.grid[r].fill(palette[r]);
        p.masked_row = uniform_int(rng, 0, 2);
        p.masked_col = uniform_int(rng, 0, 2);
    } else {
        for (int r = 0; r < 3; ++r) {
            shuffle(palette.begin(), palette.end(), rng);
            p.grid[r] = {palette[0], palette[1], palette[0]};
        }
        p.masked_row = uniform_int(rng, 0, 2);
        p.masked_col = uniform_int(rng, 0, 1) * 2;
    }
    return p;
}

// Minimum number of objects a task needs for a well-posed question.
int min_objects(TaskType task) {
    switch (task) {
    case TaskType::comparison:
    case TaskType::spatial:
    case TaskType::global:
        return 2;
    case TaskType::pattern:
        return 0;
    default:
        return 1;
    }
}

} // namespace

Scene sample_scene(std::uint64_t seed, TaskType task, Difficulty difficulty, const GenConfig& config,
                   const Vocabulary& vocab) {
    const auto [lo, hi] = object_count_range(config, task, difficulty);
    const int free_cells = task == TaskType::pattern ? kGridSize * kGridSize - 9 : kGridSize * kGridSize;
    const int need = min_objects(task);
    if (lo > hi || hi > free_cells) {
        throw GenerationError("object count range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                              "] does not fit " + std::to_string(free_cells) + " free cells");
    }
    const int n_shapes = static_cast<int>(vocab.shapes().size());
    const int n_colors = static_cast<int>(vocab.colors().size());
    const double share = config.distractor_share[index_of(difficulty)];

    for (int attempt = 0; attempt < 1000; ++attempt) {
        Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
        Scene scene;
        scene.seed = seed;
        const int n = uniform_int(rng, lo, hi);
        if (n < need) continue;

        std::vector<Cell> cells;
        for (int y = 0; y < kGridSize; ++y) {
            for (int x = 0; x < kGridSize; ++x) {
                Cell c{x, y};
                if (task == TaskType::pattern && cell_in_panel(c)) continue;
                cells.push_back(c);
            }
        }
        shuffle(cells.begin(), cells.end(), rng);

        for (int i = 0; i < n; ++i) {
            SceneObject o;
            o.shape = uniform_int(rng, 0, n_shapes - 1);
            o.color = uniform_int(rng, 0, n_colors - 1);
            o.size = bernoulli(rng, 0.5) ? ObjectSize::large : ObjectSize::small;
            if (i > 0 && bernoulli(rng, share)) {
                const auto& src = scene.objects[static_cast<size_t>(uniform_int(rng, 0, i - 1))];
                if (bernoulli(rng, 0.5)) {
                    o.shape = src.shape;
                } else {
                    o.color = src.color;
                }
            }
            o.cell = cells[static_cast<size_t>(i)];
            scene.objects.push_back(o);
        }
        if (task == TaskType::pattern) scene.panel = sample_panel(rng, difficulty, config);
        return scene;
    }
    throw GenerationError("sample_scene: could not satisfy minimum object count " + std::to_string(need) +
                          " for task " + std::string(to_string(task)) + " within 1000 attempts");
}

} // namespace svtc
