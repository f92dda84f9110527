#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "svtc/datagen/vocab.hpp"

namespace svtc {

// Recomputes the answer letter of one JSONL record from its metadata alone.
// Shares no code with the generator. Throws ValidationError naming the
// offending field when metadata is malformed or the question is ill-posed.
char recompute_answer(const nlohmann::json& record, const Vocabulary& vocab);

struct ValidationEntry {
    std::size_t line = 0;
    std::string id;
    std::string status; // "ok", "mismatch", "parse_failure"
    char stored = '?';
    char recomputed = '?';
    std::string message;
};

struct ValidationReport {
    std::size_t records = 0;
    std::size_t mismatches = 0;
    std::size_t parse_failures = 0;
    std::vector<ValidationEntry> entries;
    std::vector<std::string> warnings;

    bool ok() const { return mismatches == 0 && parse_failures == 0; }
};

ValidationReport validate_split(const std::filesystem::path& jsonl, const Vocabulary& vocab, int jobs = 0);

} // namespace svtc
