// svtc: command line front end for the experiment pipeline.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "svtc/common/error.hpp"
#include "svtc/datagen/split.hpp"
#include "svtc/datagen/validator.hpp"
#include "svtc/harness/config.hpp"
#include "svtc/harness/pipeline.hpp"

namespace {

enum Exit : int { kOk = 0, kRuntime = 1, kUsage = 2, kMismatch = 3 };

struct Globals {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int jobs = 0;
    bool overwrite = false;
    bool quiet = false;
};

svtc::ExperimentConfig effective_config(const Globals& g) {
    svtc::ExperimentConfig cfg = g.config.empty() ? svtc::ExperimentConfig{} : svtc::load_config(g.config);
    if (!g.out.empty()) cfg.output.dir = g.out;
    if (g.seed) cfg.seed = *g.seed;
    if (g.jobs > 0) cfg.jobs = g.jobs;
    cfg.validate();
    return cfg;
}

svtc::Vocabulary vocab_of(const svtc::ExperimentConfig& cfg) {
    return cfg.dataset.vocab_path.empty() ? svtc::Vocabulary::builtin() : svtc::Vocabulary::load(cfg.dataset.vocab_path);
}

// Validates every split under <out>/data, or a single JSONL when `path` is set.
int run_validate(const svtc::ExperimentConfig& cfg, const std::string& path, int jobs, bool verbose) {
    const auto vocab = vocab_of(cfg);
    std::vector<std::filesystem::path> files;
    if (!path.empty()) {
        files.push_back(path);
    } else {
        for (auto s : svtc::kAllSplits) files.push_back(svtc::split_path(cfg.output.dir / "data", s));
    }
    std::size_t bad = 0;
    for (const auto& f : files) {
        if (!std::filesystem::exists(f)) {
            throw svtc::DependencyError("missing " + f.string() + "; run 'gen-data' first");
        }
        const auto rep = svtc::validate_split(f, vocab, jobs);
        for (const auto& w : rep.warnings) std::cerr << "warning: " << w << '\n';
        for (const auto& e : rep.entries) {
            if (e.status == "ok" && !verbose) continue;
            std::cout << f.filename().string() << ":" << e.line << " " << e.id << " " << e.status;
            if (e.status == "mismatch") std::cout << " stored=" << e.stored << " recomputed=" << e.recomputed;
            if (!e.message.empty()) std::cout << " (" << e.message << ")";
            std::cout << '\n';
        }
        std::cout << f.string() << ": " << rep.records << " records, " << rep.mismatches << " mismatches, "
                  << rep.parse_failures << " parse failures\n";
        bad += rep.mismatches + rep.parse_failures;
    }
    return bad == 0 ? kOk : kMismatch;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse-feature steering experiments on synthetic visual reasoning data"};
    app.set_version_flag("--version", std::string(svtc::kToolVersion));
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output directory (overrides output.dir)");
    app.add_option("--seed", g.seed, "Experiment seed (overrides seed)");
    app.add_option("--jobs", g.jobs, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    app.add_flag("--overwrite", g.overwrite, "Re-run stages and replace existing artifacts");
    app.add_flag("-q,--quiet", g.quiet, "Suppress progress logging");

    struct Command {
        const char* name;
        const char* help;
        std::vector<svtc::Stage> stages;
        std::vector<svtc::InterventionPart> parts;
    };
    using svtc::Stage;
    using svtc::InterventionPart;
    const std::vector<Command> commands{
        {"gen-data", "Generate and render the train/val/test splits", {Stage::gen}, {}},
        {"extract", "Run the surrogate and write activation shards", {Stage::extract}, {}},
        {"probe", "Layer-wise linear probes of task type", {Stage::probe}, {}},
        {"train-sae", "Train TopK sparse autoencoders", {Stage::sae}, {}},
        {"select", "Selectivity scores, feature sets and heatmaps", {Stage::select}, {}},
        {"intervene", "Every intervention experiment", {Stage::intervene}, {}},
        {"calibrate", "Norm-matched union scale", {Stage::intervene}, {InterventionPart::calibrate}},
        {"ablate", "Zero-ablation flip rates", {Stage::intervene}, {InterventionPart::ablate}},
        {"controls", "Bootstrap control experiments", {Stage::intervene}, {InterventionPart::controls}},
        {"geometry", "Interference and geometry analytics", {Stage::geometry}, {}},
        {"report", "Emit CSV/JSONL report tables", {Stage::report}, {}},
        {"all", "Every stage in order, validating the dataset after generation",
         {std::begin(svtc::kAllStages), std::end(svtc::kAllStages)}, {}},
    };
    std::vector<CLI::App*> subs;
    for (const auto& c : commands) subs.push_back(app.add_subcommand(c.name, c.help));

    std::string validate_path;
    bool validate_verbose = false;
    auto* validate = app.add_subcommand("validate", "Recompute every answer and report mismatches");
    validate->add_option("path", validate_path, "A single reasoning_*.jsonl (default: every split under --out)");
    validate->add_flag("-v,--verbose", validate_verbose, "Print a line for every record");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    svtc::ExperimentConfig cfg;
    try {
        cfg = effective_config(g);
    } catch (const svtc::Error& e) {
        std::cerr << "svtc: config: " << e.what() << '\n';
        return kUsage;
    }

    try {
        if (validate->parsed()) return run_validate(cfg, validate_path, cfg.jobs, validate_verbose);

        svtc::RunOptions opt;
        opt.overwrite = g.overwrite;
        opt.jobs = cfg.jobs;
        opt.log = g.quiet ? nullptr : &std::cerr;
        for (std::size_t i = 0; i < commands.size(); ++i) {
            if (!subs[i]->parsed()) continue;
            const auto& c = commands[i];
            opt.parts = c.parts;
            if (std::string(c.name) == "all") {
                svtc::run_pipeline(cfg, {Stage::gen}, opt);
                const int rc = run_validate(cfg, "", cfg.jobs, false);
                if (rc != kOk) return rc;
                std::vector<Stage> rest(c.stages.begin() + 1, c.stages.end());
                svtc::run_pipeline(cfg, rest, opt);
            } else {
                svtc::run_pipeline(cfg, c.stages, opt);
            }
            std::cerr << "manifest: " << svtc::manifest_path(cfg).string() << '\n';
        }
        return kOk;
    } catch (const svtc::DependencyError& e) {
        std::cerr << "svtc: " << e.what() << '\n';
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "svtc: " << e.what() << '\n';
        return kRuntime;
    }
}
