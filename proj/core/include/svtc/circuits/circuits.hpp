#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "svtc/activation/shard.hpp"
#include "svtc/sae/sae.hpp"

namespace svtc {

struct SelectivityRow {
    double mu_pos = 0.0;
    double mu_neg = 0.0;
    double var_pos = 0.0; // population variance
    double var_neg = 0.0;
    double sigma = 0.0;
};

struct SelectivityTable {
    std::vector<SelectivityRow> rows; // one per feature
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    double eps = 1e-6;

    int features() const { return static_cast<int>(rows.size()); }
    std::vector<double> sigma() const;
};

// σ_i = (μ_pos − μ_neg) / sqrt((ν_pos + ν_neg)/2 + ε), single pass (Welford).
// codes: one pooled code row per example. With ε = 0 and zero variance the
// score is 0 for equal means and ±inf otherwise.
SelectivityTable compute_selectivity(const Eigen::MatrixXd& codes, const std::vector<bool>& positive,
                                     double eps = 1e-6);

void write_selectivity_csv(const std::filesystem::path& path, const SelectivityTable& table);

enum class SetKind : std::uint8_t { pattern, global, union_set, random_control, permuted_control };

std::string_view to_string(SetKind k);
SetKind parse_set_kind(std::string_view s);

struct SelectionRule {
    double threshold = 1.5;
    int top_n = 16; // fallback when nothing clears the threshold; 0 disables it
};

struct FeatureSet {
    SetKind kind = SetKind::pattern;
    std::vector<int> indices; // sorted, unique
    std::string rule;
    std::uint64_t seed = 0;

    std::size_t size() const { return indices.size(); }
    bool contains(int j) const;
};

// Features with σ ≥ threshold, else the top-n by σ (ties to the lower index).
// Throws ValidationError when the result would be empty.
FeatureSet select_features(const SelectivityTable& table, SetKind kind, const SelectionRule& rule);
FeatureSet union_of(const FeatureSet& pattern, const FeatureSet& global);
// Uniform draw of `size` features from [0, m) outside `exclude`.
FeatureSet random_control(int m, std::size_t size, const std::vector<int>& exclude, std::uint64_t seed);
// Seeded shuffle of the pool; the first `size` entries form the control.
FeatureSet permuted_control(const std::vector<int>& pool, std::size_t size, std::uint64_t seed);

std::string feature_set_to_jsonl(const FeatureSet& s);
FeatureSet feature_set_from_jsonl(std::string_view line, int m = -1);
void write_feature_sets(const std::filesystem::path& path, const std::vector<FeatureSet>& sets);
std::vector<FeatureSet> read_feature_sets(const std::filesystem::path& path, int m = -1);

// Per-token codes of the first `image_tokens` rows at `layer`, m columns.
Eigen::MatrixXd token_codes(const ActivationRecord& rec, std::uint32_t layer, const SaeParams& sae, int image_tokens);
// Mean image-token code of one record.
Eigen::VectorXd pooled_image_code(const ActivationRecord& rec, std::uint32_t layer, const SaeParams& sae,
                                  int image_tokens);

struct SpatialMap {
    int feature = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values; // row-major, non-negative

    double at(int r, int c) const { return values[static_cast<size_t>(r * width + c)]; }
};

SpatialMap spatial_map(const ActivationRecord& rec, const SaeParams& sae, int feature, std::uint32_t layer, int height,
                       int width);

// Features active (nonzero code) on at least one row of any matrix.
std::vector<int> active_features(const std::vector<Eigen::MatrixXd>& code_blocks, int m);

} // namespace svtc
