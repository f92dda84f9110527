#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/common/types.hpp"

namespace svtc {

struct CountRange {
    int lo = 0;
    int hi = 0;
};

// Generation knobs. Defaults are the desk-scale dataset.
struct GenConfig {
    std::filesystem::path vocab_path; // empty selects the built-in vocabulary

    std::array<std::size_t, 3> split_sizes{6000, 1500, 1500};
    std::array<std::uint64_t, 3> split_seeds{1001, 2002, 3003};

    std::array<double, kNumTaskTypes> task_weights{1, 1, 1, 1, 1, 1, 1};
    std::array<double, kNumDifficulties> difficulty_weights{1, 1, 1};

    // Object counts for scenes without a panel, and for the 7 free cells of
    // pattern scenes.
    std::array<CountRange, kNumDifficulties> object_counts{{{2, 4}, {5, 8}, {9, 12}}};
    std::array<CountRange, kNumDifficulties> pattern_distractors{{{1, 2}, {3, 4}, {5, 7}}};

    // Probability that a new object copies the shape or color of an earlier one.
    std::array<double, kNumDifficulties> distractor_share{0.0, 0.35, 0.6};

    // Weight of horizontal_symmetry vs row_repetition per difficulty.
    std::array<double, kNumDifficulties> symmetry_weight{0.0, 0.5, 1.0};

    // Per-task template weights; an empty array means uniform over the family.
    std::array<std::vector<double>, kNumTaskTypes> template_weights{};

    std::size_t split_size(SplitName s) const { return split_sizes[static_cast<int>(s)]; }
    std::uint64_t split_seed(SplitName s) const { return split_seeds[static_cast<int>(s)]; }
};

} // namespace svtc
