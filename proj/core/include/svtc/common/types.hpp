#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace svtc {

enum class TaskType : std::uint8_t {
    counting,
    comparison,
    spatial,
    pattern,
    existence,
    global,
    attribute_logic,
};

inline constexpr int kNumTaskTypes = 7;
inline constexpr std::array<TaskType, kNumTaskTypes> kAllTaskTypes = {
    TaskType::counting,  TaskType::comparison, TaskType::spatial,        TaskType::pattern,
    TaskType::existence, TaskType::global,     TaskType::attribute_logic,
};

enum class Difficulty : std::uint8_t { easy, medium, hard };

inline constexpr int kNumDifficulties = 3;
inline constexpr std::array<Difficulty, kNumDifficulties> kAllDifficulties = {
    Difficulty::easy, Difficulty::medium, Difficulty::hard};

enum class SplitName : std::uint8_t { train, val, test };

inline constexpr std::array<SplitName, 3> kAllSplits = {SplitName::train, SplitName::val,
                                                         SplitName::test};

std::string_view to_string(TaskType t);
std::string_view to_string(Difficulty d);
std::string_view to_string(SplitName s);

// Throw ValidationError naming the unknown value.
TaskType parse_task_type(std::string_view s);
Difficulty parse_difficulty(std::string_view s);
SplitName parse_split(std::string_view s);

inline constexpr int index_of(TaskType t) { return static_cast<int>(t); }
inline constexpr int index_of(Difficulty d) { return static_cast<int>(d); }

// Option letters: 0 -> 'A', 1 -> 'B', ...
char option_letter(int index);
int option_index(char letter);

} // namespace svtc
