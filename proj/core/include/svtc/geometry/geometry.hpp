#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "svtc/sae/sae.hpp"

namespace svtc {

struct DirectionStats {
    std::string kind;
    Eigen::VectorXd delta; // E_x[Σ_{j∈S} z_j(x) f_j]
    double norm = 0.0;
    std::size_t samples = 0;
};

// codes: one pooled code row per example.
DirectionStats mean_effective_direction(const Eigen::MatrixXd& codes, const SaeParams& sae,
                                        const std::vector<int>& features, std::string kind = {});

struct CosineInterference {
    double rho = 0.0;
    double union_norm = 0.0;  // ‖a + b‖
    double union_ratio = 0.0; // ‖a + b‖ / (‖a‖ + ‖b‖)
};

CosineInterference cosine_interference(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct PairwiseAlignment {
    double fraction_negative = 0.0;
    std::size_t pairs = 0;
    std::vector<std::size_t> histogram; // 20 equal bins over [-1, 1]
};

PairwiseAlignment pairwise_alignment(const SaeParams& sae, const std::vector<int>& a, const std::vector<int>& b);

struct SnrResult {
    double snr = 0.0;     // ‖δ‖² / ‖ε‖²
    double nsr_out = 0.0; // ‖ε‖ / ‖δ‖, +inf when δ = 0
    bool infinite = false;
    bool collapse = false; // nsr_out above the threshold
};

SnrResult snr_analysis(const Eigen::VectorXd& delta, const Eigen::VectorXd& noise, double collapse_threshold = 3.0);

struct AmplificationPoint {
    double delta_norm = 0.0;
    double noise_share = 0.0; // mean ‖noise part‖ / ‖signal part‖ of the LayerNorm output
};

struct AmplificationCurve {
    std::vector<AmplificationPoint> points;
    double slope = 0.0; // log–log least squares over the points with finite positive share
};

// LayerNorm of h = ‖δ‖ u + ε with ε ~ N(0, noise_scale² I / d), split into the
// parts carried by δ and by ε after normalization, gain and bias.
AmplificationCurve layernorm_amplification_sim(const Eigen::VectorXd& direction, double noise_scale,
                                               const std::vector<double>& delta_norms, const Eigen::VectorXd& gamma,
                                               const Eigen::VectorXd& beta, int draws, std::uint64_t seed);

struct EntropyPoint {
    double signal_norm = 0.0;
    double entropy = 0.0; // mean over draws, natural log
};

struct EntropyCurve {
    std::vector<EntropyPoint> points; // in the order of the sweep
    double max_entropy = 0.0;         // log T
    bool non_decreasing_as_signal_shrinks = true;
};

// One query attends over T patches. The query and patch 0 carry the signal
// h_s along `direction`; all tokens carry isotropic noise of norm ≈ noise_norm.
EntropyCurve attention_entropy_probe(const Eigen::MatrixXd& W_q, const Eigen::MatrixXd& W_k,
                                     const Eigen::VectorXd& direction, const std::vector<double>& signal_norms,
                                     double noise_norm, int patches, int draws, std::uint64_t seed);

double softmax_entropy(const Eigen::VectorXd& scores);

using VectorMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct CurvaturePoint {
    double alpha = 0.0;
    double gamma_norm = 0.0; // ‖Γ̂(v, v)‖
    double drift = 0.0;      // (α²/2) ‖Γ̂(v, v)‖
};

struct CurvatureResult {
    std::vector<CurvaturePoint> points;
    double fit_slope = 0.0; // drift ≈ slope·α² + intercept
    double fit_intercept = 0.0;
    double r2 = 1.0;
    std::vector<std::string> warnings;
};

CurvatureResult curvature_drift_error(const VectorMap& F, const Eigen::VectorXd& h0, const Eigen::VectorXd& v,
                                      const std::vector<double>& alphas);

// δ_P + (δ_G − proj_{δ_P} δ_G)
Eigen::VectorXd osp_compose(const Eigen::VectorXd& delta_p, const Eigen::VectorXd& delta_g);

// P(G active | P active); nullopt when P is never active.
std::optional<double> conditional_coactivation(const std::vector<bool>& p_active, const std::vector<bool>& g_active);

struct InterferenceReport {
    double rho = 0.0;
    double fraction_negative_pairs = 0.0;
    double union_norm_ratio = 0.0;
    std::optional<double> p_g_given_p;
    double norm_pattern = 0.0;
    double norm_global = 0.0;
    double norm_union = 0.0;
};

nlohmann::ordered_json to_json(const InterferenceReport& r);

} // namespace svtc
