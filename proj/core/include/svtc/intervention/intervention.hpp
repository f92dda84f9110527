#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "svtc/activation/shard.hpp"
#include "svtc/activation/surrogate.hpp"
#include "svtc/sae/sae.hpp"

namespace svtc {

struct InterventionSpec {
    std::vector<int> features; // sorted feature ids
    double lambda = 1.0;
    int layer = 0;
    InterventionSite site = InterventionSite::post_mlp;
};

struct InterventionResult {
    TokenMatrix state;          // h'
    Eigen::MatrixXd delta;      // image tokens x d, exact Δ before the float cast
    std::vector<double> delta_norm; // ‖Δ_t‖ per image token
    std::vector<double> rel;        // ‖Δ_t‖ / ‖h_t‖ per image token (0 when ‖h_t‖ = 0)

    double mean_rel() const;
};

// h'_t = h_t + m_t Σ_{j∈S} (λ − 1) z_{j,t} f_j with z from encode(h_t) and
// m_t = 1 on the first `image_tokens` rows. Other rows are copied untouched.
InterventionResult apply_intervention(const TokenMatrix& h, const SaeParams& sae, const std::vector<int>& features,
                                      double lambda, int image_tokens);

// argmax with ties resolved to the lowest option index.
int predict_option(const std::vector<float>& logits);

struct EvalMetrics {
    double base_acc = 0.0;
    double acc = 0.0;
    double delta_pp = 0.0;          // 100 (acc' − acc)
    double chg_pct = 0.0;           // 100 · changed predictions / n
    double rel_perturbation = 0.0;  // per-example mean of token ratios, averaged over examples
    std::size_t n = 0;
};

// Clean states, codes and predictions for one evaluation population,
// computed once and reused by every run.
class Evaluator {
public:
    // Clean states come from `records` when given (ids must align with
    // `examples`), otherwise from a surrogate forward pass.
    Evaluator(const SurrogateModel& model, const SaeParams& sae, int layer, InterventionSite site,
              std::vector<ExampleFeatures> examples, const std::vector<ActivationRecord>* records = nullptr,
              int jobs = 0);

    std::size_t size() const { return items_.size(); }
    int layer() const { return layer_; }
    const SaeParams& sae() const { return sae_; }
    const ExampleFeatures& example(std::size_t i) const { return items_[i].ex; }
    const TokenMatrix& clean_state(std::size_t i) const { return items_[i].state; }
    int clean_prediction(std::size_t i) const { return items_[i].clean_pred; }

    // All examples when `subset` is null.
    EvalMetrics run(const std::vector<int>& features, double lambda, const std::vector<std::size_t>* subset = nullptr) const;
    // Intervened prediction per example of the subset.
    std::vector<int> predictions(const std::vector<int>& features, double lambda,
                                 const std::vector<std::size_t>* subset = nullptr) const;
    // E[‖Δ‖/‖h‖] without running the model.
    double rel_perturbation(const std::vector<int>& features, double lambda,
                            const std::vector<std::size_t>* subset = nullptr) const;
    // Fraction of examples on which at least one feature of the set is
    // nonzero on at least one image token.
    std::vector<bool> set_active(const std::vector<int>& features) const;
    // Per-token sparse codes of example i's image tokens.
    const std::vector<SparseCode>& codes(std::size_t i) const { return items_[i].codes; }

private:
    struct Item {
        ExampleFeatures ex;
        TokenMatrix state;
        std::vector<SparseCode> codes;
        std::vector<double> token_norm;
        int clean_pred = 0;
    };
    const SurrogateModel& model_;
    SaeParams sae_;
    int layer_;
    InterventionSite site_;
    int jobs_;
    std::vector<Item> items_;

    std::vector<std::size_t> all_or(const std::vector<std::size_t>* subset) const;
};

// λ grid from `lo` to `hi` inclusive in steps of 1/`steps_per_unit`, as exact k / steps_per_unit.
std::vector<double> lambda_grid(int lo_k, int hi_k, int steps_per_unit);

struct CalibrationPoint {
    double lambda = 0.0;
    double perturbation = 0.0;
    double residual = 0.0;
};

struct Calibration {
    double lambda = 1.0;
    double residual = 0.0;
    double target = 0.0; // reference perturbation
    std::vector<CalibrationPoint> table; // every evaluated point, coarse then refined
};

// Scans λ ∈ {0.1, …, 2.0}, then refines at 0.01 within ±0.1 of the coarse
// argmin. Residuals within 1e-12 · reference of each other tie; ties go to the smaller λ.
Calibration calibrate_norm_match(double reference, const std::function<double(double)>& perturbation,
                                 int coarse_steps = 10, int fine_steps = 100);

struct SensitivityRow {
    int layer = 0;
    double lambda = 1.0;
    EvalMetrics metrics;
    double sensitivity = 0.0; // |delta_pp|
};

// One row per (layer, λ). Layers without an evaluator are skipped.
std::vector<SensitivityRow> layer_sensitivity_profile(const std::vector<const Evaluator*>& evaluators,
                                                      const std::vector<std::vector<int>>& sets,
                                                      const std::vector<double>& lambdas);

struct FlipRate {
    double flip_pct = 0.0;
    double set_fraction = 0.0; // |S| / m
    std::size_t set_size = 0;
};

FlipRate zero_ablation_fliprate(const Evaluator& eval, const std::vector<int>& features,
                                const std::vector<std::size_t>* subset = nullptr);

struct BootstrapRun {
    std::size_t perm_index = 0;
    std::size_t subsample_index = 0;
    std::uint64_t perm_seed = 0;
    std::uint64_t subsample_seed = 0;
    EvalMetrics metrics;
};

struct BootstrapReport {
    std::vector<BootstrapRun> runs;
    double delta_pp_mean = 0.0, delta_pp_std = 0.0;
    double chg_mean = 0.0, chg_std = 0.0;
    double base_mean = 0.0;
    double rel_mean = 0.0;
};

using BootstrapFn = std::function<EvalMetrics(std::uint64_t perm_seed, const std::vector<std::size_t>& subset)>;

// Deterministic subsample of n indices from [0, population) without replacement, sorted.
std::vector<std::size_t> draw_subsample(std::size_t population, std::size_t n, std::uint64_t seed);

// perm_seeds × subsamples runs; subsample s is shared across permutation seeds.
BootstrapReport bootstrap(const BootstrapFn& run_fn, std::size_t population, std::uint64_t seed,
                          std::size_t perm_seeds = 3, std::size_t subsamples = 5, std::size_t n = 600);

struct ControlInputs {
    std::vector<int> pattern;
    std::vector<int> global;
    std::vector<int> union_set;
    std::vector<int> pool; // features eligible for the permutation control
    double pattern_lambda = 2.0;
};

struct ControlRow {
    std::string config;
    double lambda = 1.0;          // mean λ over runs when it varies per seed
    std::size_t set_size = 0;
    BootstrapReport report;
};

// Pattern steering, the norm-matched union, size-matched random sets,
// norm-preserving permutations of the pool, and norm-matched single sets.
std::vector<ControlRow> run_controls(const Evaluator& eval, const ControlInputs& in, std::uint64_t seed,
                                     std::size_t perm_seeds = 3, std::size_t subsamples = 5, std::size_t n = 600);

} // namespace svtc
