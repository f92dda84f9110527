#include "svtc/harness/config.hpp"

#include <fstream>
#include <set>

#include "svtc/common/error.hpp"
#include "svtc/common/hash.hpp"

namespace svtc {

namespace {

using nlohmann::json;

// Reads the keys of one JSON object and rejects any it was not asked about.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw FormatError("config: " + where() + " must be an object");
    }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw FormatError("config: " + path_ + "." + key + ": " + e.what());
        }
    }

    template <typename Fn>
    void object(const std::string& key, Fn&& fn) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        Section child(j_.at(key), path_ + "." + key);
        fn(child);
        child.finish();
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) throw FormatError("config: unknown key " + path_ + "." + key);
        }
    }

    std::string where() const { return path_.empty() ? "top level" : path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename Enum, typename Parse>
void get_enum(Section& s, const std::string& key, Enum& out, Parse parse) {
    std::string text;
    s.get(key, text);
    if (!text.empty()) {
        try {
            out = parse(text);
        } catch (const Error& e) {
            throw FormatError("config: " + s.where() + "." + key + ": " + e.what());
        }
    }
}

void read_splits(Section& s, const std::string& key, auto& arr) {
    s.object(key, [&](Section& c) {
        for (SplitName n : kAllSplits) c.get(std::string(to_string(n)), arr[static_cast<size_t>(n)]);
    });
}

} // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("config: " + m); };
    for (std::size_t n : dataset.split_sizes) {
        if (n == 0) fail("dataset split sizes must be positive");
    }
    const auto& s = surrogate;
    if (s.layers < 1 || s.dim < 16 || s.tokens < s.grid_h * s.grid_w) fail("surrogate dimensions are inconsistent");
    if (s.plant_layer < 0 || s.plant_layer >= s.layers) fail("surrogate.plant_layer outside [0, layers)");
    if (probe.seeds.empty()) fail("probe.seeds must not be empty");
    if (sae.expansion < 1 || sae.k < 1 || sae.k > sae.expansion * s.dim) fail("sae needs expansion >= 1 and 1 <= k <= m");
    if (sae.vectors < 1) fail("sae.vectors must be positive");
    if (sae.layer >= s.layers) fail("sae.layer outside [0, layers)");
    if (sae.train.steps < 1 || sae.train.batch_size < 1) fail("sae.steps and sae.batch_size must be positive");
    if (selection.eps <= 0.0) fail("selection.eps must be positive");
    if (intervention.pattern_lambda < 0.0) fail("intervention.pattern_lambda must be non-negative");
    for (double v : intervention.sweep_scales) {
        if (v < 0.0) fail("intervention.sweep_scales must be non-negative");
    }
    for (int l : intervention.extra_layers) {
        if (l < 0 || l >= s.layers) fail("intervention.extra_layers entry outside [0, layers)");
    }
    const std::size_t eval_n = dataset.split_size(intervention.eval_split);
    if (intervention.n > eval_n) fail("intervention.n exceeds the evaluation split size");
    for (std::size_t n : intervention.subsample_sizes) {
        if (n == 0 || n > eval_n) fail("intervention.subsample_sizes entries must lie in [1, eval split size]");
    }
    if (intervention.perm_seeds == 0 || intervention.subsamples == 0) fail("bootstrap grid must be non-empty");
    if (geometry.draws < 1) fail("geometry.draws must be positive");
    if (!output.csv && !output.jsonl) fail("output must enable csv or jsonl");
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Section top(j, "");
    top.get("seed", c.seed);
    top.get("jobs", c.jobs);
    top.object("dataset", [&](Section& s) {
        std::string vocab;
        s.get("vocab", vocab);
        c.dataset.vocab_path = vocab;
        read_splits(s, "split_sizes", c.dataset.split_sizes);
        read_splits(s, "seeds", c.dataset.split_seeds);
    });
    top.object("surrogate", [&](Section& s) {
        auto& m = c.surrogate;
        s.get("seed", m.seed);
        s.get("layers", m.layers);
        s.get("dim", m.dim);
        s.get("tokens", m.tokens);
        s.get("mlp_width", m.mlp_width);
        s.get("plant_layer", m.plant_layer);
        s.get("gate_layer", m.gate_layer);
        s.get("amplitudes", m.amplitudes);
        s.get("noise_scale", m.noise_scale);
    });
    top.object("probe", [&](Section& s) {
        get_enum(s, "pooling", c.probe.pooling, parse_pool_scope);
        s.get("seeds", c.probe.seeds);
        s.get("l2", c.probe.train.l2);
        s.get("max_iters", c.probe.train.max_iters);
    });
    top.object("sae", [&](Section& s) {
        s.get("expansion", c.sae.expansion);
        s.get("k", c.sae.k);
        s.get("vectors", c.sae.vectors);
        s.get("layer", c.sae.layer);
        s.get("lr", c.sae.train.lr);
        s.get("batch_size", c.sae.train.batch_size);
        s.get("steps", c.sae.train.steps);
        s.get("checkpoint_every", c.sae.train.checkpoint_every);
        s.get("dead_window", c.sae.train.dead_window);
        s.get("seed", c.sae.train.seed);
        s.get("pre_bias", c.sae.train.pre_bias);
    });
    top.object("selection", [&](Section& s) {
        s.get("threshold", c.selection.rule.threshold);
        s.get("top_n", c.selection.rule.top_n);
        s.get("eps", c.selection.eps);
        s.get("heatmaps", c.selection.heatmaps);
    });
    top.object("intervention", [&](Section& s) {
        auto& v = c.intervention;
        get_enum(s, "site", v.site, parse_intervention_site);
        get_enum(s, "eval_split", v.eval_split, parse_split);
        s.get("pattern_lambda", v.pattern_lambda);
        s.get("sweep_scales", v.sweep_scales);
        s.get("extra_layers", v.extra_layers);
        s.object("bootstrap", [&](Section& b) {
            b.get("perm_seeds", v.perm_seeds);
            b.get("subsamples", v.subsamples);
            b.get("n", v.n);
            b.get("subsample_sizes", v.subsample_sizes);
        });
    });
    top.object("geometry", [&](Section& s) {
        s.get("collapse_threshold", c.geometry.collapse_threshold);
        s.get("draws", c.geometry.draws);
        s.get("delta_norms", c.geometry.delta_norms);
        s.get("signal_norms", c.geometry.signal_norms);
        s.get("alphas", c.geometry.alphas);
    });
    top.object("output", [&](Section& s) {
        std::string dir;
        s.get("dir", dir);
        if (!dir.empty()) c.output.dir = dir;
        std::vector<std::string> formats;
        s.get("formats", formats);
        if (!formats.empty()) {
            c.output.csv = c.output.jsonl = false;
            for (const auto& f : formats) {
                if (f == "csv") {
                    c.output.csv = true;
                } else if (f == "jsonl") {
                    c.output.jsonl = true;
                } else {
                    throw FormatError("config: output.formats: unknown format '" + f + "'");
                }
            }
        }
    });
    top.finish();
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& c) {
    using oj = nlohmann::ordered_json;
    auto splits = [](const auto& arr) {
        oj o;
        for (SplitName n : kAllSplits) o[std::string(to_string(n))] = arr[static_cast<size_t>(n)];
        return o;
    };
    oj j;
    j["seed"] = c.seed;
    j["dataset"] = {{"vocab", c.dataset.vocab_path.string()},
                    {"split_sizes", splits(c.dataset.split_sizes)},
                    {"seeds", splits(c.dataset.split_seeds)}};
    const auto& m = c.surrogate;
    j["surrogate"] = {{"seed", m.seed},           {"layers", m.layers},           {"dim", m.dim},
                      {"tokens", m.tokens},       {"mlp_width", m.mlp_width},     {"plant_layer", m.plant_layer},
                      {"gate_layer", m.gate_layer}, {"amplitudes", m.amplitudes}, {"noise_scale", m.noise_scale}};
    j["probe"] = {{"pooling", to_string(c.probe.pooling)},
                  {"seeds", c.probe.seeds},
                  {"l2", c.probe.train.l2},
                  {"max_iters", c.probe.train.max_iters}};
    const auto& t = c.sae.train;
    j["sae"] = {{"expansion", c.sae.expansion}, {"k", c.sae.k},
                {"vectors", c.sae.vectors},     {"layer", c.sae.layer},
                {"lr", t.lr},                   {"batch_size", t.batch_size},
                {"steps", t.steps},             {"checkpoint_every", t.checkpoint_every},
                {"dead_window", t.dead_window}, {"seed", t.seed},
                {"pre_bias", t.pre_bias}};
    j["selection"] = {{"threshold", c.selection.rule.threshold},
                      {"top_n", c.selection.rule.top_n},
                      {"eps", c.selection.eps},
                      {"heatmaps", c.selection.heatmaps}};
    const auto& v = c.intervention;
    j["intervention"] = {{"site", to_string(v.site)},
                         {"eval_split", to_string(v.eval_split)},
                         {"pattern_lambda", v.pattern_lambda},
                         {"sweep_scales", v.sweep_scales},
                         {"extra_layers", v.extra_layers},
                         {"bootstrap",
                          {{"perm_seeds", v.perm_seeds},
                           {"subsamples", v.subsamples},
                           {"n", v.n},
                           {"subsample_sizes", v.subsample_sizes}}}};
    j["geometry"] = {{"collapse_threshold", c.geometry.collapse_threshold},
                     {"draws", c.geometry.draws},
                     {"delta_norms", c.geometry.delta_norms},
                     {"signal_norms", c.geometry.signal_norms},
                     {"alphas", c.geometry.alphas}};
    oj formats = oj::array();
    if (c.output.csv) formats.push_back("csv");
    if (c.output.jsonl) formats.push_back("jsonl");
    j["output"] = {{"formats", formats}};
    return j;
}

std::string config_hash(const ExperimentConfig& c) { return sha256_hex(config_to_json(c).dump()); }

} // namespace svtc
