#include "svtc/datagen/split.hpp"

#include <cstdio>
#include <fstream>

#include "svtc/common/error.hpp"
#include "svtc/common/parallel.hpp"
#include "svtc/common/seed.hpp"
#include "svtc/datagen/render.hpp"
#include "svtc/datagen/scene.hpp"

namespace svtc {

std::string example_id(SplitName split, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%05zu", index);
    return std::string(to_string(split)) + "_" + buf;
}

QAExample generate_example(SplitName split, std::uint64_t split_seed, std::size_t index, const GenConfig& config,
                           const Vocabulary& vocab) {
    const std::uint64_t seed = derive_seed(split_seed, static_cast<std::uint64_t>(index));
    Rng rng = make_rng(derive_seed(seed, "task"));
    const auto task = kAllTaskTypes[static_cast<size_t>(weighted_index(rng, config.task_weights))];
    const auto difficulty = kAllDifficulties[static_cast<size_t>(weighted_index(rng, config.difficulty_weights))];
    std::string last_error;
    for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
        const Scene scene = sample_scene(derive_seed(derive_seed(seed, "scene"), attempt), task, difficulty, config, vocab);
        try {
            QAExample e = instantiate_question(scene, task, difficulty,
                                               derive_seed(derive_seed(seed, "question"), attempt), config, vocab);
            e.id = example_id(split, index);
            e.image = "images/" + e.id + ".png";
            return e;
        } catch (const GenerationError& ex) {
            last_error = ex.what();
        }
    }
    throw GenerationError("example " + example_id(split, index) + ": " + last_error);
}

std::filesystem::path split_path(const std::filesystem::path& root, SplitName name) {
    return root / ("reasoning_" + std::string(to_string(name)) + ".jsonl");
}

DatasetSplit generate_split(const GenConfig& config, SplitName name, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const Vocabulary& vocab, bool overwrite, int jobs) {
    namespace fs = std::filesystem;
    const fs::path jsonl = split_path(out_dir, name);
    if (fs::exists(jsonl) && !overwrite) {
        throw IoError(jsonl.string() + " already exists; pass --overwrite to replace it");
    }
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

    DatasetSplit split;
    split.name = name;
    split.seed = seed;
    split.records.resize(config.split_size(name));
    parallel_for(split.records.size(), jobs, [&](std::size_t i) {
        split.records[i] = generate_example(name, seed, i, config, vocab);
        write_png(out_dir / split.records[i].image, render_scene(split.records[i].scene, vocab));
    });

    const fs::path tmp = jsonl.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        for (const auto& e : split.records) out << example_to_json(e, vocab).dump() << '\n';
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    fs::rename(tmp, jsonl, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + jsonl.string() + ": " + ec.message());
    return split;
}

DatasetSplit read_split(const std::filesystem::path& root, SplitName name, const Vocabulary& vocab) {
    const auto path = split_path(root, name);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    DatasetSplit split;
    split.name = name;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        try {
            split.records.push_back(example_from_json(nlohmann::json::parse(line), vocab));
        } catch (const std::exception& ex) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return split;
}

} // namespace svtc
