#include "svtc/harness/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>

#include "svtc/activation/pooling.hpp"
#include "svtc/activation/shard.hpp"
#include "svtc/circuits/circuits.hpp"
#include "svtc/common/error.hpp"
#include "svtc/common/hash.hpp"
#include "svtc/common/parallel.hpp"
#include "svtc/common/seed.hpp"
#include "svtc/datagen/split.hpp"
#include "svtc/geometry/geometry.hpp"
#include "svtc/harness/report.hpp"
#include "svtc/intervention/intervention.hpp"
#include "svtc/probing/probe.hpp"

namespace svtc {

namespace fs = std::filesystem;
using oj = nlohmann::ordered_json;

std::string_view to_string(Stage s) {
    switch (s) {
    case Stage::gen: return "gen";
    case Stage::extract: return "extract";
    case Stage::probe: return "probe";
    case Stage::sae: return "sae";
    case Stage::select: return "select";
    case Stage::intervene: return "intervene";
    case Stage::geometry: return "geometry";
    case Stage::report: return "report";
    }
    return "?";
}

Stage parse_stage(std::string_view s) {
    for (Stage st : kAllStages) {
        if (to_string(st) == s) return st;
    }
    throw ValidationError("unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(InterventionPart p) {
    switch (p) {
    case InterventionPart::main: return "main";
    case InterventionPart::calibrate: return "calibrate";
    case InterventionPart::ablate: return "ablate";
    case InterventionPart::controls: return "controls";
    case InterventionPart::sweep: return "sweep";
    }
    return "?";
}

oj RunManifest::to_json() const {
    oj j;
    j["tool_version"] = tool_version;
    j["config_hash"] = config_hash;
    j["seeds"] = seeds;
    oj st = oj::object();
    for (Stage s : kAllStages) {
        const std::string name(to_string(s));
        for (const auto& [key, rec] : stages) {
            if (key != name && key.rfind(name + ":", 0) != 0) continue;
            oj r;
            r["input_hash"] = rec.input_hash;
            r["seconds"] = rec.seconds;
            r["skipped"] = rec.skipped;
            oj a = oj::object();
            for (const auto& [path, h] : rec.artifacts) a[path] = {{"sha256", h.sha256}, {"bytes", h.bytes}};
            r["artifacts"] = a;
            st[key] = r;
        }
    }
    j["stages"] = st;
    return j;
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.tool_version = j.at("tool_version").get<std::string>();
        m.config_hash = j.at("config_hash").get<std::string>();
        m.seeds = j.at("seeds");
        for (const auto& [key, r] : j.at("stages").items()) {
            StageRecord rec;
            rec.input_hash = r.at("input_hash").get<std::string>();
            rec.seconds = r.at("seconds").get<double>();
            rec.skipped = r.at("skipped").get<bool>();
            for (const auto& [path, h] : r.at("artifacts").items()) {
                rec.artifacts[path] = {h.at("sha256").get<std::string>(), h.at("bytes").get<std::uint64_t>()};
            }
            m.stages[key] = rec;
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("manifest: ") + e.what());
    }
    return m;
}

fs::path manifest_path(const ExperimentConfig& config) { return config.output.dir / "manifest.json"; }

namespace {

void write_json(const fs::path& path, const oj& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

std::string lambda_label(double lam) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", lam);
    return buf;
}

oj metrics_row(const std::string& config, const EvalMetrics& m, std::uint64_t seed) {
    return {{"config", config},       {"base", m.base_acc},
            {"delta_pp", m.delta_pp}, {"chg_pct", m.chg_pct},
            {"rel_perturbation", m.rel_perturbation}, {"n", m.n},
            {"seed", seed}};
}

oj bootstrap_row(const std::string& config, const BootstrapReport& r, std::size_t n, std::uint64_t seed) {
    return {{"config", config},         {"base", r.base_mean},    {"delta_pp_mean", r.delta_pp_mean},
            {"delta_pp_std", r.delta_pp_std}, {"chg_mean", r.chg_mean}, {"chg_std", r.chg_std},
            {"rel_perturbation", r.rel_mean}, {"n", n},               {"seed", seed}};
}

struct Input {
    std::string path; // relative to the output directory
    Stage producer;
};

class Pipeline {
public:
    Pipeline(const ExperimentConfig& cfg, const RunOptions& opt)
        : cfg_(cfg), opt_(opt), root_(cfg.output.dir), model_(cfg.surrogate),
          vocab_(cfg.dataset.vocab_path.empty() ? Vocabulary::builtin() : Vocabulary::load(cfg.dataset.vocab_path)) {
        jobs_ = opt.jobs > 0 ? opt.jobs : (cfg.jobs > 0 ? cfg.jobs : default_jobs());
        fs::create_directories(root_);
        if (fs::exists(manifest_path(cfg_))) {
            manifest_ = RunManifest::from_json(read_json(manifest_path(cfg_)));
        }
        manifest_.tool_version = std::string(kToolVersion);
        manifest_.config_hash = config_hash(cfg_);
        oj splits;
        for (SplitName s : kAllSplits) splits[std::string(to_string(s))] = cfg_.dataset.split_seed(s);
        manifest_.seeds = {{"experiment", cfg_.seed},
                           {"dataset", splits},
                           {"surrogate", cfg_.surrogate.seed},
                           {"probe", cfg_.probe.seeds},
                           {"sae", sae_seed()},
                           {"controls", derive_seed(cfg_.seed, "controls")},
                           {"selection", derive_seed(cfg_.seed, "selection")}};
    }

    RunManifest run(const std::vector<Stage>& stages) {
        for (Stage s : kAllStages) {
            if (std::find(stages.begin(), stages.end(), s) == stages.end()) continue;
            switch (s) {
            case Stage::gen: stage_gen(); break;
            case Stage::extract: stage_extract(); break;
            case Stage::probe: stage_probe(); break;
            case Stage::sae: stage_sae(); break;
            case Stage::select: stage_select(); break;
            case Stage::intervene: stage_intervene(); break;
            case Stage::geometry: stage_geometry(); break;
            case Stage::report: stage_report(); break;
            }
        }
        return manifest_;
    }

private:
    const ExperimentConfig& cfg_;
    RunOptions opt_;
    fs::path root_;
    SurrogateModel model_;
    Vocabulary vocab_;
    int jobs_ = 1;
    RunManifest manifest_;

    std::uint64_t sae_seed() const { return derive_seed(cfg_.seed, cfg_.sae.train.seed); }

    void log(const std::string& stage, const std::string& msg) const {
        if (opt_.log) *opt_.log << "[" << stage << "] " << msg << '\n' << std::flush;
    }

    static std::string shard_rel(SplitName s) { return "activations/" + std::string(to_string(s)) + ".svtc"; }
    static std::string split_rel(SplitName s) { return "data/reasoning_" + std::string(to_string(s)) + ".jsonl"; }
    static std::string sae_rel(int layer) { return "sae/sae_l" + std::to_string(layer) + ".bin"; }
    static std::string sets_rel(int layer) { return "select/feature_sets_l" + std::to_string(layer) + ".jsonl"; }

    ArtifactHash hash_artifact(const std::string& rel) const {
        const fs::path p = root_ / rel;
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(p)) {
                if (e.is_regular_file()) files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            std::string listing;
            ArtifactHash h;
            for (const auto& f : files) {
                listing += f.filename().string() + ":" + sha256_file(f) + "\n";
                h.bytes += fs::file_size(f);
            }
            h.sha256 = sha256_hex(listing);
            return h;
        }
        return {sha256_file(p), fs::file_size(p)};
    }

    std::string recorded_hash(const std::string& rel) const {
        for (const auto& [name, rec] : manifest_.stages) {
            const auto it = rec.artifacts.find(rel);
            if (it != rec.artifacts.end() && fs::exists(root_ / rel) && fs::file_size(root_ / rel) == it->second.bytes) {
                return it->second.sha256;
            }
        }
        return hash_artifact(rel).sha256;
    }

    void require(const std::string& stage, const std::vector<Input>& inputs) const {
        for (const auto& in : inputs) {
            if (!fs::exists(root_ / in.path)) {
                throw DependencyError("stage '" + stage + "' needs " + (root_ / in.path).string() + "; run stage '" +
                                      std::string(to_string(in.producer)) + "' first");
            }
        }
    }

    bool intact(const StageRecord& rec) const {
        for (const auto& [rel, h] : rec.artifacts) {
            const fs::path p = root_ / rel;
            if (!fs::exists(p)) return false;
            if (!fs::is_directory(p) && fs::file_size(p) != h.bytes) return false;
        }
        return true;
    }

    // Runs `body` unless the stage is up to date. `body` returns the artifacts it wrote.
    void run_stage(const std::string& name, const oj& section, const std::vector<Input>& inputs,
                   const std::function<std::vector<std::string>()>& body) {
        require(name, inputs);
        std::string material = name + "\n" + section.dump() + "\n";
        for (const auto& in : inputs) material += in.path + ":" + recorded_hash(in.path) + "\n";
        const std::string input_hash = sha256_hex(material);
        const auto it = manifest_.stages.find(name);
        if (!opt_.overwrite && it != manifest_.stages.end() && it->second.input_hash == input_hash && intact(it->second)) {
            it->second.skipped = true;
            log(name, "up to date, skipped");
            save_manifest();
            return;
        }
        log(name, "running");
        const auto t0 = std::chrono::steady_clock::now();
        const auto written = body();
        StageRecord rec;
        rec.input_hash = input_hash;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (const auto& rel : written) rec.artifacts[rel] = hash_artifact(rel);
        manifest_.stages[name] = rec;
        save_manifest();
        log(name, "done in " + std::to_string(rec.seconds) + " s");
    }

    void save_manifest() const { write_json(manifest_path(cfg_), manifest_.to_json()); }

    oj section(const char* key) const { return config_to_json(cfg_).at(key); }

    std::vector<ExampleFeatures> load_features(SplitName s) const {
        const auto split = read_split(root_ / "data", s, vocab_);
        std::vector<ExampleFeatures> out;
        out.reserve(split.records.size());
        for (const auto& e : split.records) out.push_back(features_of(e));
        return out;
    }

    std::vector<ActivationRecord> load_layer(SplitName s, std::uint32_t layer, std::size_t limit = SIZE_MAX) const {
        ShardReader reader(root_ / shard_rel(s));
        std::vector<ActivationRecord> out;
        while (out.size() < limit) {
            auto r = reader.next_layer(layer);
            if (!r) break;
            out.push_back(std::move(*r));
        }
        return out;
    }

    int image_tokens() const { return model_.image_tokens(); }

    // ---- gen ----
    void stage_gen() {
        run_stage("gen", section("dataset"), {}, [&] {
            std::vector<std::string> written;
            for (SplitName s : kAllSplits) {
                generate_split(cfg_.dataset, s, cfg_.dataset.split_seed(s), root_ / "data", vocab_, opt_.overwrite, jobs_);
                written.push_back(split_rel(s));
                log("gen", std::string(to_string(s)) + ": " + std::to_string(cfg_.dataset.split_size(s)) + " examples");
            }
            written.push_back("data/images");
            return written;
        });
    }

    // ---- extract ----
    void stage_extract() {
        std::vector<Input> in;
        for (SplitName s : kAllSplits) in.push_back({split_rel(s), Stage::gen});
        run_stage("extract", section("surrogate"), in, [&] {
            std::vector<std::string> written;
            fs::create_directories(root_ / "activations");
            for (SplitName s : kAllSplits) {
                const auto feats = load_features(s);
                ShardWriter writer(root_ / shard_rel(s), model_.header());
                const std::size_t chunk = 256;
                for (std::size_t start = 0; start < feats.size(); start += chunk) {
                    const std::size_t n = std::min(chunk, feats.size() - start);
                    std::vector<ActivationRecord> recs(n);
                    parallel_for(n, jobs_, [&](std::size_t i) { recs[i] = model_.forward(feats[start + i]); });
                    for (const auto& r : recs) writer.write(r);
                }
                writer.close();
                written.push_back(shard_rel(s));
                written.push_back(shard_rel(s) + ".index.jsonl");
            }
            return written;
        });
    }

    // ---- probe ----
    struct PooledSplit {
        std::vector<Eigen::MatrixXd> layers;
        std::vector<int> labels;
    };

    PooledSplit pooled(SplitName s) const {
        const auto feats = load_features(s);
        ShardReader reader(root_ / shard_rel(s));
        const auto L = reader.header().layers;
        PooledSplit out;
        out.layers.assign(L, Eigen::MatrixXd(static_cast<Eigen::Index>(feats.size()), reader.header().dim));
        std::size_t i = 0;
        while (auto r = reader.next()) {
            if (i >= feats.size() || r->id != feats[i].id) {
                throw ValidationError("probe: shard " + shard_rel(s) + " is out of step with the split at record " +
                                      std::to_string(i));
            }
            for (std::uint32_t l = 0; l < L; ++l) {
                out.layers[l].row(static_cast<Eigen::Index>(i)) =
                    pool_tokens(*r, l, cfg_.probe.pooling, reader.header().image_tokens()).transpose();
            }
            ++i;
        }
        if (i != feats.size()) throw ValidationError("probe: shard " + shard_rel(s) + " has fewer records than the split");
        for (const auto& f : feats) out.labels.push_back(index_of(f.task));
        return out;
    }

    void stage_probe() {
        run_stage("probe", section("probe"),
                  {{shard_rel(SplitName::train), Stage::extract}, {shard_rel(SplitName::val), Stage::extract}}, [&] {
                      const auto train = pooled(SplitName::train);
                      const auto val = pooled(SplitName::val);
                      const auto rep = layer_sweep(train.layers, train.labels, val.layers, val.labels, kNumTaskTypes,
                                                   cfg_.probe.seeds, cfg_.probe.train, jobs_);
                      const auto& bl = rep.layers[static_cast<size_t>(rep.best_layer)];
                      log("probe", "best layer " + std::to_string(rep.best_layer) + " accuracy " +
                                       std::to_string(bl.mean) + ", shuffled " + std::to_string(rep.shuffled_mean));
                      oj rows = oj::array();
                      oj layers = oj::array();
                      for (const auto& la : rep.layers) {
                          rows.push_back({{"layer", la.layer},
                                          {"mean_acc", la.mean},
                                          {"std_acc", la.std},
                                          {"shuffled_acc", la.layer == rep.best_layer ? oj(rep.shuffled_mean) : oj(nullptr)}});
                          layers.push_back({{"layer", la.layer}, {"per_seed", la.per_seed}});
                      }
                      oj bundle = {{"best_layer", rep.best_layer},
                                   {"shuffled_mean", rep.shuffled_mean},
                                   {"shuffled_std", rep.shuffled_std},
                                   {"seeds", cfg_.probe.seeds},
                                   {"per_seed", layers},
                                   {"probe_trajectory", rows}};
                      write_json(root_ / "probe/results.json", bundle);
                      return std::vector<std::string>{"probe/results.json"};
                  });
    }

    // ---- sae ----
    int sae_layer() const {
        if (cfg_.sae.layer >= 0) return cfg_.sae.layer;
        const fs::path p = root_ / "probe/results.json";
        if (!fs::exists(p)) {
            throw DependencyError("stage 'sae' needs the probe's best layer (" + p.string() +
                                  "); run stage 'probe' first or set sae.layer");
        }
        return read_json(p).at("best_layer").get<int>();
    }

    std::vector<int> sae_layers() const {
        std::vector<int> layers{sae_layer()};
        for (int l : cfg_.intervention.extra_layers) {
            if (std::find(layers.begin(), layers.end(), l) == layers.end()) layers.push_back(l);
        }
        return layers;
    }

    void stage_sae() {
        std::vector<Input> in{{shard_rel(SplitName::train), Stage::extract}};
        if (cfg_.sae.layer < 0) in.push_back({"probe/results.json", Stage::probe});
        require("sae", in);
        oj sec = section("sae");
        sec["experiment_seed"] = cfg_.seed;
        sec["extra_layers"] = cfg_.intervention.extra_layers;
        run_stage("sae", sec, in, [&] {
            std::vector<std::string> written;
            fs::create_directories(root_ / "sae");
            const int n_img = image_tokens();
            const std::size_t records = static_cast<std::size_t>((cfg_.sae.vectors + n_img - 1) / n_img);
            for (int layer : sae_layers()) {
                const auto recs = load_layer(SplitName::train, static_cast<std::uint32_t>(layer), records);
                Eigen::MatrixXd X(cfg_.sae.vectors, model_.config().dim);
                int row = 0;
                for (const auto& r : recs) {
                    const auto h = r.layer(static_cast<std::uint32_t>(layer));
                    for (int t = 0; t < n_img && row < cfg_.sae.vectors; ++t) X.row(row++) = h.row(t).cast<double>();
                }
                if (row < cfg_.sae.vectors) X.conservativeResize(row, Eigen::NoChange);
                SaeTrainConfig tc = cfg_.sae.train;
                tc.seed = sae_seed();
                TrainStats st;
                oj checkpoints = oj::array();
                const SaeParams p = train_sae(X, cfg_.sae.expansion * model_.config().dim, cfg_.sae.k, tc, &st,
                                              [&](int step, const SaeParams& params) {
                                                  checkpoints.push_back(
                                                      {{"step", step}, {"max_norm_deviation", params.max_norm_deviation()}});
                                              });
                save_sae(root_ / sae_rel(layer), p);
                oj curve = oj::array();
                for (std::size_t s = 0; s < st.step_loss.size(); s += 50) curve.push_back({{"step", s + 1}, {"loss", st.step_loss[s]}});
                write_json(root_ / ("sae/stats_l" + std::to_string(layer) + ".json"),
                           {{"layer", layer},
                            {"vectors", X.rows()},
                            {"m", p.m()},
                            {"k", p.k},
                            {"initial_loss", st.initial_loss},
                            {"final_loss", st.final_loss},
                            {"final_relative_error", st.final_relative_error},
                            {"dead_features", st.dead_features},
                            {"max_norm_deviation", st.max_norm_deviation},
                            {"checkpoints", checkpoints},
                            {"loss_curve", curve}});
                log("sae", "layer " + std::to_string(layer) + ": loss " + std::to_string(st.initial_loss) + " -> " +
                               std::to_string(st.final_loss) + ", relative error " +
                               std::to_string(st.final_relative_error) + ", dead " + std::to_string(st.dead_features));
                written.push_back(sae_rel(layer));
                written.push_back("sae/stats_l" + std::to_string(layer) + ".json");
            }
            write_json(root_ / "sae/sae.json", {{"layer", sae_layer()}, {"layers", sae_layers()}});
            written.push_back("sae/sae.json");
            return written;
        });
    }

    // ---- select ----
    int selected_layer() const {
        const fs::path p = root_ / "sae/sae.json";
        if (!fs::exists(p)) throw DependencyError("missing " + p.string() + "; run stage 'sae' first");
        return read_json(p).at("layer").get<int>();
    }

    SaeParams load_layer_sae(int layer) const {
        const fs::path p = root_ / sae_rel(layer);
        if (!fs::exists(p)) throw DependencyError("missing " + p.string() + "; run stage 'sae' first");
        return load_sae(p, cfg_.sae.train.pre_bias);
    }

    struct TrainCodes {
        Eigen::MatrixXd pooled;
        std::vector<std::vector<int>> active; // sorted active features per example
        std::vector<TaskType> tasks;
    };

    TrainCodes train_codes(int layer, const SaeParams& sae) const {
        const auto feats = load_features(SplitName::train);
        const auto recs = load_layer(SplitName::train, static_cast<std::uint32_t>(layer));
        if (recs.size() != feats.size()) throw ValidationError("train shard and split differ in length");
        TrainCodes tc;
        tc.pooled.resize(static_cast<Eigen::Index>(recs.size()), sae.m());
        tc.active.resize(recs.size());
        parallel_for(recs.size(), jobs_, [&](std::size_t i) {
            if (recs[i].id != feats[i].id) {
                throw ValidationError("id mismatch at train record " + std::to_string(i) + ": shard '" + recs[i].id +
                                      "', split '" + feats[i].id + "'");
            }
            const Eigen::MatrixXd z = token_codes(recs[i], static_cast<std::uint32_t>(layer), sae, image_tokens());
            tc.pooled.row(static_cast<Eigen::Index>(i)) = z.colwise().mean();
            for (Eigen::Index j = 0; j < z.cols(); ++j) {
                if ((z.col(j).array() != 0.0).any()) tc.active[i].push_back(static_cast<int>(j));
            }
        });
        for (const auto& f : feats) tc.tasks.push_back(f.task);
        return tc;
    }

    static std::vector<bool> task_mask(const std::vector<TaskType>& tasks, TaskType t) {
        std::vector<bool> out;
        for (TaskType x : tasks) out.push_back(x == t);
        return out;
    }

    void stage_select() {
        const int layer = selected_layer();
        std::vector<Input> in{{shard_rel(SplitName::train), Stage::extract},
                              {shard_rel(cfg_.intervention.eval_split), Stage::extract},
                              {"sae/sae.json", Stage::sae}};
        for (int l : sae_layers()) in.push_back({sae_rel(l), Stage::sae});
        oj sec = section("selection");
        sec["experiment_seed"] = cfg_.seed;
        run_stage("select", sec, in, [&] {
            std::vector<std::string> written;
            fs::create_directories(root_ / "select/heatmaps");
            const auto sel_seed = derive_seed(cfg_.seed, "selection");
            for (int l : sae_layers()) {
                const SaeParams sae = load_layer_sae(l);
                const TrainCodes tc = train_codes(l, sae);
                const auto tp = compute_selectivity(tc.pooled, task_mask(tc.tasks, TaskType::pattern), cfg_.selection.eps);
                const auto tg = compute_selectivity(tc.pooled, task_mask(tc.tasks, TaskType::global), cfg_.selection.eps);
                const FeatureSet p = select_features(tp, SetKind::pattern, cfg_.selection.rule);
                const FeatureSet g = select_features(tg, SetKind::global, cfg_.selection.rule);
                const FeatureSet u = union_of(p, g);
                std::vector<int> pool;
                {
                    std::vector<char> seen(static_cast<size_t>(sae.m()), 0);
                    for (const auto& a : tc.active) {
                        for (int j : a) seen[static_cast<size_t>(j)] = 1;
                    }
                    for (int j = 0; j < sae.m(); ++j) {
                        if (seen[static_cast<size_t>(j)]) pool.push_back(j);
                    }
                }
                const FeatureSet rnd = random_control(sae.m(), u.size(), u.indices, sel_seed);
                const FeatureSet perm = permuted_control(pool, std::min(u.size(), pool.size()), sel_seed);
                const std::string suffix = "_l" + std::to_string(l);
                write_selectivity_csv(root_ / ("select/selectivity_pattern" + suffix + ".csv"), tp);
                write_selectivity_csv(root_ / ("select/selectivity_global" + suffix + ".csv"), tg);
                write_feature_sets(root_ / sets_rel(l), {p, g, u, rnd, perm});
                write_json(root_ / ("select/pool" + suffix + ".json"), {{"layer", l}, {"active_features", pool}});
                written.push_back("select/selectivity_pattern" + suffix + ".csv");
                written.push_back("select/selectivity_global" + suffix + ".csv");
                written.push_back(sets_rel(l));
                written.push_back("select/pool" + suffix + ".json");
                log("select", "layer " + std::to_string(l) + ": |pattern| " + std::to_string(p.size()) + ", |global| " +
                                  std::to_string(g.size()) + ", |union| " + std::to_string(u.size()) + ", pool " +
                                  std::to_string(pool.size()));
                if (l == layer) write_heatmaps(l, sae, tp, tg, p, g);
            }
            written.push_back("select/heatmaps");
            return written;
        });
    }

    void write_heatmaps(int layer, const SaeParams& sae, const SelectivityTable& tp, const SelectivityTable& tg,
                        const FeatureSet& p, const FeatureSet& g) const {
        const SplitName es = cfg_.intervention.eval_split;
        const auto feats = load_features(es);
        auto first_of = [&](TaskType t) -> std::optional<std::size_t> {
            for (std::size_t i = 0; i < feats.size(); ++i) {
                if (feats[i].task == t) return i;
            }
            return std::nullopt;
        };
        const auto recs = load_layer(es, static_cast<std::uint32_t>(layer));
        auto emit = [&](const FeatureSet& set, const SelectivityTable& t, TaskType task) {
            const auto idx = first_of(task);
            if (!idx) return;
            std::vector<int> order = set.indices;
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                return t.rows[static_cast<size_t>(a)].sigma > t.rows[static_cast<size_t>(b)].sigma;
            });
            for (int i = 0; i < std::min<int>(cfg_.selection.heatmaps, static_cast<int>(order.size())); ++i) {
                const auto map = spatial_map(recs[*idx], sae, order[static_cast<size_t>(i)],
                                             static_cast<std::uint32_t>(layer), cfg_.surrogate.grid_h,
                                             cfg_.surrogate.grid_w);
                plot_heatmap(map, root_ / "select/heatmaps" /
                                      (std::string(to_string(set.kind)) + "_f" + std::to_string(order[static_cast<size_t>(i)]) +
                                       "_" + recs[*idx].id + ".png"));
            }
        };
        emit(p, tp, TaskType::pattern);
        emit(g, tg, TaskType::global);
    }

    // ---- intervene ----
    struct Sets {
        FeatureSet pattern, global, union_set;
        std::vector<int> pool;
    };

    Sets load_sets(int layer) const {
        const auto sets = read_feature_sets(root_ / sets_rel(layer));
        Sets s;
        for (const auto& f : sets) {
            if (f.kind == SetKind::pattern) s.pattern = f;
            if (f.kind == SetKind::global) s.global = f;
            if (f.kind == SetKind::union_set) s.union_set = f;
        }
        s.pool = read_json(root_ / ("select/pool_l" + std::to_string(layer) + ".json"))
                     .at("active_features")
                     .get<std::vector<int>>();
        return s;
    }

    std::unique_ptr<Evaluator> make_evaluator(int layer, const SaeParams& sae) const {
        const SplitName es = cfg_.intervention.eval_split;
        auto feats = load_features(es);
        const int source = cfg_.intervention.site == InterventionSite::post_mlp ? layer : layer - 1;
        if (source < 0) return std::make_unique<Evaluator>(model_, sae, layer, cfg_.intervention.site, std::move(feats),
                                                           nullptr, jobs_);
        const auto recs = load_layer(es, static_cast<std::uint32_t>(source));
        return std::make_unique<Evaluator>(model_, sae, layer, cfg_.intervention.site, std::move(feats), &recs, jobs_);
    }

    void stage_intervene() {
        const int layer = selected_layer();
        const SplitName es = cfg_.intervention.eval_split;
        std::vector<Input> in{{split_rel(es), Stage::gen}, {shard_rel(es), Stage::extract}, {"sae/sae.json", Stage::sae}};
        for (int l : sae_layers()) {
            in.push_back({sae_rel(l), Stage::sae});
            in.push_back({sets_rel(l), Stage::select});
        }
        std::vector<InterventionPart> parts = opt_.parts;
        if (parts.empty()) parts.assign(std::begin(kAllInterventionParts), std::end(kAllInterventionParts));
        std::string name = "intervene";
        if (parts.size() != std::size(kAllInterventionParts)) {
            for (auto p : parts) name += ":" + std::string(to_string(p));
        }
        oj sec = section("intervention");
        sec["experiment_seed"] = cfg_.seed;
        run_stage(name, sec, in, [&] {
            const SaeParams sae = load_layer_sae(layer);
            const Sets sets = load_sets(layer);
            const auto eval = make_evaluator(layer, sae);
            const std::uint64_t seed = cfg_.seed;
            const double lp = cfg_.intervention.pattern_lambda;
            const double ref = eval->rel_perturbation(sets.pattern.indices, lp);
            const Calibration cal = calibrate_norm_match(
                ref, [&](double lam) { return eval->rel_perturbation(sets.union_set.indices, lam); });
            const double lu = cal.lambda;

            const fs::path bundle_path = root_ / "intervene/results.json";
            oj bundle = fs::exists(bundle_path) ? oj(read_json(bundle_path)) : oj::object();
            bundle["layer"] = layer;
            bundle["union_lambda"] = lu;
            std::vector<std::string> written;
            auto has = [&](InterventionPart p) { return std::find(parts.begin(), parts.end(), p) != parts.end(); };

            if (has(InterventionPart::calibrate)) {
                std::string csv = "lambda,perturbation,residual\n";
                for (const auto& pt : cal.table) {
                    char buf[128];
                    std::snprintf(buf, sizeof buf, "%.2f,%.10g,%.10g\n", pt.lambda, pt.perturbation, pt.residual);
                    csv += buf;
                }
                write_text(root_ / "intervene/calibration.csv", csv);
                written.push_back("intervene/calibration.csv");
                bundle["calibration"] = {{"reference", "pattern (s=" + lambda_label(lp) + ")"},
                                         {"target", ref},
                                         {"lambda", lu},
                                         {"residual", cal.residual}};
                log("intervene", "norm-matched union scale " + lambda_label(lu));
            }
            if (has(InterventionPart::main)) {
                oj rows = oj::array();
                const auto rnd = random_control(sae.m(), sets.union_set.size(), sets.union_set.indices,
                                                derive_seed(seed, "selection"));
                auto add = [&](const std::string& cfgname, const std::vector<int>& set, double lam) {
                    rows.push_back(metrics_row(cfgname + " (s=" + lambda_label(lam) + ")", eval->run(set, lam), seed));
                };
                add("pattern", sets.pattern.indices, lp);
                add("global", sets.global.indices, lp);
                add("union", sets.union_set.indices, lu);
                add("random", rnd.indices, lu);
                add("pattern", sets.pattern.indices, 0.0);
                add("global", sets.global.indices, 0.0);
                add("union", sets.union_set.indices, 0.0);
                bundle["main_table"] = rows;
            }
            if (has(InterventionPart::ablate)) {
                oj ab = oj::array();
                for (const auto* s : {&sets.pattern, &sets.global, &sets.union_set}) {
                    const FlipRate f = zero_ablation_fliprate(*eval, s->indices);
                    ab.push_back({{"set", to_string(s->kind)},
                                  {"flip_pct", f.flip_pct},
                                  {"set_size", f.set_size},
                                  {"set_fraction", f.set_fraction}});
                }
                bundle["ablation"] = ab;
                write_json(root_ / "intervene/ablation.json", ab);
                written.push_back("intervene/ablation.json");
            }
            if (has(InterventionPart::controls)) {
                const auto& iv = cfg_.intervention;
                ControlInputs ci{sets.pattern.indices, sets.global.indices, sets.union_set.indices, sets.pool, lp};
                const auto cseed = derive_seed(seed, "controls");
                oj rows = oj::array();
                for (const auto& r : run_controls(*eval, ci, cseed, iv.perm_seeds, iv.subsamples, iv.n)) {
                    rows.push_back(bootstrap_row(r.config, r.report, iv.n, cseed));
                }
                for (std::size_t n : iv.subsample_sizes) {
                    for (const auto& [nm, set, lam] :
                         {std::tuple{"pattern", &sets.pattern.indices, lp}, std::tuple{"union", &sets.union_set.indices, lu}}) {
                        const auto rep = bootstrap(
                            [&, set = set, lam = lam](std::uint64_t, const std::vector<std::size_t>& sub) {
                                return eval->run(*set, lam, &sub);
                            },
                            eval->size(), cseed, iv.perm_seeds, iv.subsamples, n);
                        rows.push_back(bootstrap_row(std::string(nm) + " (s=" + lambda_label(lam) + ") subsample", rep, n, cseed));
                    }
                }
                bundle["controls_table"] = rows;
            }
            if (has(InterventionPart::sweep)) {
                oj rows = oj::array();
                for (double s : cfg_.intervention.sweep_scales) {
                    for (const auto* set : {&sets.pattern, &sets.union_set}) {
                        oj r = metrics_row(std::string(to_string(set->kind)), eval->run(set->indices, s), seed);
                        r["layer"] = layer;
                        r["scale"] = s;
                        rows.push_back(r);
                    }
                }
                // Equal-norm sensitivity: each layer's pattern set scaled to
                // the perturbation of pattern steering at the SAE layer.
                for (int l : sae_layers()) {
                    const SaeParams lsae = load_layer_sae(l);
                    const Sets lsets = load_sets(l);
                    const auto leval = l == layer ? nullptr : make_evaluator(l, lsae);
                    const Evaluator& e = leval ? *leval : *eval;
                    const double lam = l == layer ? lp : calibrate_norm_match(ref, [&](double x) {
                                                             return e.rel_perturbation(lsets.pattern.indices, x);
                                                         }).lambda;
                    oj r = metrics_row("pattern equal-norm", e.run(lsets.pattern.indices, lam), seed);
                    r["layer"] = l;
                    r["scale"] = lam;
                    rows.push_back(r);
                }
                bundle["sweep_table"] = rows;
            }
            write_json(bundle_path, bundle);
            written.push_back("intervene/results.json");
            return written;
        });
    }

    // ---- geometry ----
    void stage_geometry() {
        const int layer = selected_layer();
        const SplitName es = cfg_.intervention.eval_split;
        std::vector<Input> in{{shard_rel(SplitName::train), Stage::extract}, {shard_rel(es), Stage::extract},
                              {sae_rel(layer), Stage::sae}, {sets_rel(layer), Stage::select}};
        oj sec = section("geometry");
        sec["experiment_seed"] = cfg_.seed;
        run_stage("geometry", sec, in, [&] {
            const SaeParams sae = load_layer_sae(layer);
            const Sets sets = load_sets(layer);
            const TrainCodes tc = train_codes(layer, sae);
            const auto dp = mean_effective_direction(tc.pooled, sae, sets.pattern.indices, "pattern");
            const auto dg = mean_effective_direction(tc.pooled, sae, sets.global.indices, "global");
            const auto du = mean_effective_direction(tc.pooled, sae, sets.union_set.indices, "union");
            const auto ci = cosine_interference(dp.delta, dg.delta);
            const auto pa = pairwise_alignment(sae, sets.pattern.indices, sets.global.indices);
            auto active = [&](const std::vector<int>& set) {
                std::vector<bool> out;
                for (const auto& a : tc.active) {
                    bool hit = false;
                    for (int j : set) hit = hit || std::binary_search(a.begin(), a.end(), j);
                    out.push_back(hit);
                }
                return out;
            };
            InterferenceReport rep;
            rep.rho = ci.rho;
            rep.fraction_negative_pairs = pa.fraction_negative;
            rep.union_norm_ratio = ci.union_ratio;
            rep.p_g_given_p = conditional_coactivation(active(sets.pattern.indices), active(sets.global.indices));
            rep.norm_pattern = dp.norm;
            rep.norm_global = dg.norm;
            rep.norm_union = du.norm;
            const auto snr = snr_analysis(dp.delta, dg.delta, cfg_.geometry.collapse_threshold);

            const auto& g = cfg_.geometry;
            const int d = model_.config().dim;
            const Eigen::VectorXd dir = dp.delta / dp.norm;
            const auto amp = layernorm_amplification_sim(dir, 1.0, g.delta_norms, Eigen::VectorXd::Ones(d),
                                                         Eigen::VectorXd::Zero(d), g.draws,
                                                         derive_seed(cfg_.seed, "layernorm"));
            Rng wr = make_rng(derive_seed(cfg_.seed, "attention-maps"));
            Eigen::MatrixXd wq(d, d), wk(d, d);
            for (Eigen::Index i = 0; i < wq.size(); ++i) wq.data()[i] = standard_normal(wr) / std::sqrt(double(d));
            for (Eigen::Index i = 0; i < wk.size(); ++i) wk.data()[i] = standard_normal(wr) / std::sqrt(double(d));
            const auto ent = attention_entropy_probe(wq, wk, dir, g.signal_norms, 1.0, image_tokens(), g.draws,
                                                     derive_seed(cfg_.seed, "attention"));

            // Curvature of the block after the SAE layer around a clean eval state.
            const int block = std::min(layer + 1, model_.config().layers - 1);
            const auto recs = load_layer(es, static_cast<std::uint32_t>(block - 1 >= 0 ? block - 1 : 0), 1);
            Eigen::MatrixXd h0 = recs.at(0).layer(recs[0].first_layer).cast<double>();
            Eigen::MatrixXd vdir = Eigen::MatrixXd::Zero(h0.rows(), h0.cols());
            for (int t = 0; t < image_tokens(); ++t) vdir.row(t) = dir.transpose();
            vdir /= vdir.norm();
            const auto rows = h0.rows();
            const auto cols = h0.cols();
            VectorMap F = [&](const Eigen::VectorXd& x) {
                const Eigen::MatrixXd m = Eigen::Map<const Eigen::MatrixXd>(x.data(), rows, cols);
                const Eigen::MatrixXd y = model_.block_map_f64(block, m);
                return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(y.data(), y.size()));
            };
            const auto curv = curvature_drift_error(F, Eigen::Map<const Eigen::VectorXd>(h0.data(), h0.size()),
                                                    Eigen::Map<const Eigen::VectorXd>(vdir.data(), vdir.size()),
                                                    g.alphas);
            for (const auto& w : curv.warnings) log("geometry", w);

            std::string lcsv = "delta_norm,noise_share\n";
            for (const auto& p : amp.points) lcsv += fmt(p.delta_norm) + "," + fmt(p.noise_share) + "\n";
            std::string ecsv = "signal_norm,entropy,max_entropy\n";
            for (const auto& p : ent.points) ecsv += fmt(p.signal_norm) + "," + fmt(p.entropy) + "," + fmt(ent.max_entropy) + "\n";
            std::string ccsv = "alpha,gamma_norm,drift\n";
            for (const auto& p : curv.points) ccsv += fmt(p.alpha) + "," + fmt(p.gamma_norm) + "," + fmt(p.drift) + "\n";
            write_text(root_ / "geometry/layernorm_curve.csv", lcsv);
            write_text(root_ / "geometry/entropy_curve.csv", ecsv);
            write_text(root_ / "geometry/curvature_curve.csv", ccsv);

            oj row = to_json(rep);
            oj bundle = {{"layer", layer},
                         {"interference", oj::array({row})},
                         {"histogram", pa.histogram},
                         {"snr", {{"snr", snr.snr}, {"nsr_out", snr.infinite ? oj(nullptr) : oj(snr.nsr_out)},
                                  {"collapse", snr.collapse}}},
                         {"layernorm_slope", amp.slope},
                         {"entropy_non_decreasing", ent.non_decreasing_as_signal_shrinks},
                         {"curvature_block", block},
                         {"curvature_r2", curv.r2},
                         {"curvature_slope", curv.fit_slope}};
            write_json(root_ / "geometry/results.json", bundle);
            write_text(root_ / "geometry/interference.jsonl", row.dump() + "\n");
            log("geometry", "rho " + fmt(rep.rho) + ", union ratio " + fmt(rep.union_norm_ratio) + ", LN slope " +
                                fmt(amp.slope) + ", curvature R2 " + fmt(curv.r2));
            return std::vector<std::string>{"geometry/results.json", "geometry/interference.jsonl",
                                            "geometry/layernorm_curve.csv", "geometry/entropy_curve.csv",
                                            "geometry/curvature_curve.csv"};
        });
    }

    static std::string fmt(double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.10g", v);
        return buf;
    }

    // ---- report ----
    void stage_report() {
        const std::vector<std::pair<std::string, Stage>> bundles{{"probe/results.json", Stage::probe},
                                                                 {"intervene/results.json", Stage::intervene},
                                                                 {"geometry/results.json", Stage::geometry}};
        std::vector<Input> in;
        for (const auto& [path, st] : bundles) {
            if (fs::exists(root_ / path)) in.push_back({path, st});
        }
        if (in.empty()) {
            throw DependencyError("stage 'report' needs at least one results bundle; run 'probe', 'intervene' or "
                                  "'geometry' first");
        }
        run_stage("report", section("output"), in, [&] {
            std::vector<std::string> written;
            for (const auto& i : in) {
                const auto b = read_json(root_ / i.path);
                for (ReportSchema s : kAllSchemas) {
                    const std::string key(to_string(s));
                    if (!b.contains(key)) continue;
                    std::vector<ReportRow> rows;
                    for (const auto& r : b.at(key)) rows.push_back(ReportRow(r));
                    for (const auto& p : emit_report(rows, s, root_ / "reports", cfg_.output.csv, cfg_.output.jsonl)) {
                        written.push_back(fs::relative(p, root_).generic_string());
                    }
                }
            }
            return written;
        });
    }
};

} // namespace

RunManifest run_pipeline(const ExperimentConfig& config, const std::vector<Stage>& stages, const RunOptions& options) {
    config.validate();
    Pipeline p(config, options);
    return p.run(stages);
}

} // namespace svtc
