#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/harness/config.hpp"

namespace svtc {

inline constexpr std::string_view kToolVersion = "svtc 0.1.0";

enum class Stage : std::uint8_t { gen, extract, probe, sae, select, intervene, geometry, report };

inline constexpr Stage kAllStages[] = {Stage::gen,    Stage::extract,   Stage::probe,    Stage::sae,
                                       Stage::select, Stage::intervene, Stage::geometry, Stage::report};

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

// Parts of the intervene stage that can run on their own.
enum class InterventionPart : std::uint8_t { main, calibrate, ablate, controls, sweep };
inline constexpr InterventionPart kAllInterventionParts[] = {InterventionPart::calibrate, InterventionPart::main,
                                                             InterventionPart::ablate, InterventionPart::controls,
                                                             InterventionPart::sweep};
std::string_view to_string(InterventionPart p);

struct ArtifactHash {
    std::string sha256;
    std::uint64_t bytes = 0;
};

struct StageRecord {
    std::string input_hash;
    double seconds = 0.0;
    bool skipped = false;
    std::map<std::string, ArtifactHash> artifacts; // paths relative to the output directory
};

struct RunManifest {
    std::string tool_version{kToolVersion};
    std::string config_hash;
    nlohmann::ordered_json seeds;
    std::map<std::string, StageRecord> stages;

    nlohmann::ordered_json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
};

struct RunOptions {
    bool overwrite = false;
    int jobs = 0;
    std::ostream* log = nullptr;
    // Parts run by the intervene stage; empty means all.
    std::vector<InterventionPart> parts;
};

// Runs the requested stages in pipeline order under config.output.dir and
// writes <dir>/manifest.json. A stage whose inputs hash to the recorded value
// and whose artifacts are intact is skipped unless overwrite is set. Throws
// DependencyError naming the stage to run first when inputs are missing.
RunManifest run_pipeline(const ExperimentConfig& config, const std::vector<Stage>& stages,
                         const RunOptions& options = {});

std::filesystem::path manifest_path(const ExperimentConfig& config);

} // namespace svtc
