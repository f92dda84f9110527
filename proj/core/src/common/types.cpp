#include "svtc/common/types.hpp"

#include "svtc/common/error.hpp"

namespace svtc {

namespace {
constexpr std::array<std::string_view, kNumTaskTypes> kTaskNames = {
    "counting", "comparison", "spatial", "pattern", "existence", "global", "attribute_logic"};
constexpr std::array<std::string_view, kNumDifficulties> kDifficultyNames = {"easy", "medium",
                                                                             "hard"};
constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val", "test"};
} // namespace

std::string_view to_string(TaskType t) { return kTaskNames[static_cast<int>(t)]; }
std::string_view to_string(Difficulty d) { return kDifficultyNames[static_cast<int>(d)]; }
std::string_view to_string(SplitName s) { return kSplitNames[static_cast<int>(s)]; }

TaskType parse_task_type(std::string_view s) {
    for (int i = 0; i < kNumTaskTypes; ++i) {
        if (kTaskNames[i] == s) return static_cast<TaskType>(i);
    }
    throw ValidationError("unknown task_type '" + std::string(s) + "'");
}

Difficulty parse_difficulty(std::string_view s) {
    for (int i = 0; i < kNumDifficulties; ++i) {
        if (kDifficultyNames[i] == s) return static_cast<Difficulty>(i);
    }
    throw ValidationError("unknown difficulty '" + std::string(s) + "'");
}

SplitName parse_split(std::string_view s) {
    for (int i = 0; i < 3; ++i) {
        if (kSplitNames[i] == s) return static_cast<SplitName>(i);
    }
    throw ValidationError("unknown split '" + std::string(s) + "'");
}

char option_letter(int index) {
    if (index < 0 || index >= 26) throw ValidationError("option index out of range");
    return static_cast<char>('A' + index);
}

int option_index(char letter) {
    if (letter < 'A' || letter > 'Z') {
        throw ValidationError(std::string("invalid option letter '") + letter + "'");
    }
    return letter - 'A';
}

} // namespace svtc
