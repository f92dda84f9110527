#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/activation/pooling.hpp"
#include "svtc/activation/surrogate.hpp"
#include "svtc/circuits/circuits.hpp"
#include "svtc/datagen/config.hpp"
#include "svtc/probing/probe.hpp"
#include "svtc/sae/sae.hpp"

namespace svtc {

struct ProbeSection {
    PoolScope pooling = PoolScope::all;
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    ProbeConfig train;
};

struct SaeSection {
    int expansion = 8; // m = expansion · d
    int k = 8;
    int vectors = 20000; // image-token vectors from the train split
    int layer = -1;      // -1: the probe's best layer
    SaeTrainConfig train;
};

struct SelectionSection {
    SelectionRule rule;
    double eps = 1e-6;
    int heatmaps = 2; // spatial maps per set
};

struct InterventionSection {
    InterventionSite site = InterventionSite::post_mlp;
    SplitName eval_split = SplitName::test;
    double pattern_lambda = 2.0;
    std::vector<double> sweep_scales{0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0};
    std::vector<int> extra_layers{4}; // sensitivity layers besides the SAE layer
    std::size_t perm_seeds = 3;
    std::size_t subsamples = 5;
    std::size_t n = 600;
    std::vector<std::size_t> subsample_sizes{200, 400, 600, 800, 1000};
};

struct GeometrySection {
    double collapse_threshold = 3.0;
    int draws = 200;
    std::vector<double> delta_norms{1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1};
    std::vector<double> signal_norms{0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
    std::vector<double> alphas{1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 1e-1};
};

struct OutputSection {
    std::filesystem::path dir = "runs/default";
    bool csv = true;
    bool jsonl = true;
};

struct ExperimentConfig {
    std::uint64_t seed = 2024; // experiment seed for SAE, controls and bootstrap draws
    int jobs = 0;
    GenConfig dataset;
    SurrogateConfig surrogate;
    ProbeSection probe;
    SaeSection sae;
    SelectionSection selection;
    InterventionSection intervention;
    GeometrySection geometry;
    OutputSection output;

    void validate() const;
};

// Every section and key is optional; unknown keys are rejected with their path.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
// Effective configuration with all defaults filled in; jobs and the output
// directory are left out because they do not affect results.
nlohmann::ordered_json config_to_json(const ExperimentConfig& c);
std::string config_hash(const ExperimentConfig& c);

} // namespace svtc
