#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svtc/common/types.hpp"
#include "svtc/datagen/config.hpp"
#include "svtc/datagen/question.hpp"
#include "svtc/datagen/vocab.hpp"

namespace svtc {

struct DatasetSplit {
    SplitName name = SplitName::train;
    std::uint64_t seed = 0;
    std::vector<QAExample> records;
};

// "{split}_{index:05d}"
std::string example_id(SplitName split, std::size_t index);

// Example `index` of a split. Depends only on (split_seed, index, config).
QAExample generate_example(SplitName split, std::uint64_t split_seed, std::size_t index, const GenConfig& config,
                           const Vocabulary& vocab);

// Writes <out_dir>/images/*.png and <out_dir>/reasoning_{split}.jsonl. Refuses
// to replace an existing JSONL unless `overwrite` is set.
DatasetSplit generate_split(const GenConfig& config, SplitName name, std::uint64_t seed,
                            const std::filesystem::path& out_dir, const Vocabulary& vocab, bool overwrite = false,
                            int jobs = 0);

std::filesystem::path split_path(const std::filesystem::path& root, SplitName name);

DatasetSplit read_split(const std::filesystem::path& root, SplitName name, const Vocabulary& vocab);

} // namespace svtc
