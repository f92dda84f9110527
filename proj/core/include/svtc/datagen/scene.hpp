#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/common/types.hpp"
#include "svtc/datagen/config.hpp"
#include "svtc/datagen/vocab.hpp"

namespace svtc {

inline constexpr int kGridSize = 4;
inline constexpr int kCellPixels = 32;
inline constexpr int kCanvasPixels = kGridSize * kCellPixels;

enum class ObjectSize : std::uint8_t { small, large };

std::string_view to_string(ObjectSize s);
ObjectSize parse_object_size(std::string_view s);

struct Cell {
    int x = 0; // column, 0 at the left
    int y = 0; // row, 0 at the top
    bool operator==(const Cell&) const = default;
};

struct SceneObject {
    int shape = 0; // vocabulary index
    int color = 0; // vocabulary index
    ObjectSize size = ObjectSize::small;
    Cell cell;
    bool operator==(const SceneObject&) const = default;
};

enum class PatternRule : std::uint8_t { row_repetition, horizontal_symmetry };

std::string_view to_string(PatternRule r);
PatternRule parse_pattern_rule(std::string_view s);

// 3x3 tile panel drawn over grid cells x,y in {1,2,3}. grid[row][col] holds the
// true color of every tile, including the masked one.
struct PatternPanel {
    std::array<std::array<int, 3>, 3> grid{};
    int masked_row = 0;
    int masked_col = 0;
    PatternRule rule = PatternRule::row_repetition;

    int answer() const { return grid[masked_row][masked_col]; }
    bool operator==(const PatternPanel&) const = default;
};

inline constexpr int kPanelOrigin = 1; // first grid cell covered by the panel

struct Scene {
    std::vector<SceneObject> objects;
    std::optional<PatternPanel> panel;
    std::uint64_t seed = 0;
    bool operator==(const Scene&) const = default;
};

bool cell_in_panel(Cell c);

// Metadata form: colors and shapes by id, renderer hex codes, masked tile as null.
nlohmann::ordered_json scene_to_json(const Scene& scene, const Vocabulary& vocab);

// Inclusive object-count range the sampler uses for (task, difficulty).
std::pair<int, int> object_count_range(const GenConfig& config, TaskType task, Difficulty difficulty);

// Samples a scene. Pattern scenes carry a panel and keep objects outside it.
// Throws GenerationError naming the failed constraint after 1000 attempts.
Scene sample_scene(std::uint64_t seed, TaskType task, Difficulty difficulty, const GenConfig& config,
                   const Vocabulary& vocab);

} // namespace svtc
