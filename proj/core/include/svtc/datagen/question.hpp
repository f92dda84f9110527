#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/common/types.hpp"
#include "svtc/datagen/config.hpp"
#include "svtc/datagen/scene.hpp"
#include "svtc/datagen/vocab.hpp"

namespace svtc {

// Conjunctive object filter. Unset fields match anything.
struct Predicate {
    std::optional<int> shape;
    std::optional<int> color;
    std::optional<ObjectSize> size;
    std::optional<int> exclude_color;

    bool matches(const SceneObject& o) const;
    bool operator==(const Predicate&) const = default;
};

nlohmann::ordered_json predicate_to_json(const Predicate& p, const Vocabulary& vocab);

// "large red circles", "triangles that are not teal"
std::string describe_plural(const Predicate& p, const Vocabulary& vocab);
// "a large red circle", "an orange object"
std::string describe_singular(const Predicate& p, const Vocabulary& vocab, bool with_article = true);

struct QAExample {
    std::string id;
    std::string image;
    std::string question;
    std::vector<std::string> options; // option texts without letters
    int answer = 0;                    // index into options
    TaskType task = TaskType::counting;
    Difficulty difficulty = Difficulty::easy;
    Scene scene;
    nlohmann::ordered_json query; // task-specific metadata fields

    char answer_letter() const { return option_letter(answer); }
};

// Unified JSONL record: {id, image, question, options, answer, task_type,
// difficulty, metadata{scene..., query}}.
nlohmann::ordered_json example_to_json(const QAExample& e, const Vocabulary& vocab);
QAExample example_from_json(const nlohmann::json& j, const Vocabulary& vocab);

// Draws a template for the task, resampling internally until the question is
// well-posed. Throws GenerationError after 1000 draws.
QAExample instantiate_question(const Scene& scene, TaskType task, Difficulty difficulty, std::uint64_t seed,
                               const GenConfig& config, const Vocabulary& vocab);

// Template names per task, in weight order.
const std::vector<std::string>& template_names(TaskType task);

// Count words used in global-task thresholds ("three").
std::string number_word(int n);

} // namespace svtc
