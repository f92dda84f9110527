#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "svtc/activation/shard.hpp"
#include "svtc/common/types.hpp"
#include "svtc/datagen/question.hpp"

namespace svtc {

struct SurrogateConfig {
    std::uint64_t seed = 7;
    int layers = 8;
    int dim = 64;
    int tokens = 48;
    int grid_h = 4;
    int grid_w = 4;
    int mlp_width = 128;
    int plant_layer = 5;
    int gate_layer = 6;
    std::array<double, kNumDifficulties> amplitudes{3.0, 2.0, 1.2};

    // Embedding scales.
    double carrier_norm = 8.0; // constant image/text carrier keeps token norms stable under LN
    double position_scale = 0.5;
    double content_scale = 1.0;
    double evidence_scale = 1.0;
    int nuisance_rank = 4;
    double nuisance_scale = 1.0;
    double noise_scale = 0.1;
    int content_codebook = 32;

    // Random residual MLPs.
    double block_scale = 0.05;

    // Gate block: unit j = GELU(sharpness * (ev_gain * <B_j, x> + task_gain * <sum U, x> - threshold)),
    // writing gate_out_gain * A_j. Evidence directions B are never read out directly.
    double gate_evidence_gain = 1.07;
    double gate_task_gain = 0.48;
    double gate_threshold = 1.4;
    double gate_sharpness = 4.0;
    double gate_out_gain = 1.0;

    // Readout: logit_j = readout_gain * <A_j, mean_t h_t> + prior_j.
    double readout_gain = 4.0;
    double prior_first_option = 0.3;
};

enum class InterventionSite : std::uint8_t { post_mlp, pre_block };

std::string_view to_string(InterventionSite s);
InterventionSite parse_intervention_site(std::string_view s);

// What the surrogate sees of one example.
struct ExampleFeatures {
    std::string id;
    TaskType task = TaskType::counting;
    Difficulty difficulty = Difficulty::easy;
    int answer = 0;
    int n_options = 2;
    std::array<int, 16> cell_object{}; // packed object attributes per grid cell, -1 when empty
};

ExampleFeatures features_of(const QAExample& e);

// Seeded residual network standing in for a frozen VLM:
// state[l] = state[l-1] + MLP_l(LN_l(state[l-1])) (+ planted task signal at
// plant_layer). state[-1] is the embedding. Immutable after construction.
class SurrogateModel {
public:
    static constexpr int kAnswerSlots = 13;

    explicit SurrogateModel(SurrogateConfig config);

    const SurrogateConfig& config() const { return cfg_; }
    ShardHeader header() const;
    int image_tokens() const { return cfg_.grid_h * cfg_.grid_w; }

    TokenMatrix embed(const ExampleFeatures& ex) const;
    // Applies block l in place. The planted signal is added only when `ex` is given.
    void apply_block(int l, TokenMatrix& h, const ExampleFeatures* ex) const;
    // Block l's map without the plant; used for curvature estimates.
    TokenMatrix block_map(int l, const TokenMatrix& h) const;
    // Same map evaluated in double precision, for finite-difference work.
    Eigen::MatrixXd block_map_f64(int l, const Eigen::MatrixXd& h) const;
    std::vector<float> readout(const TokenMatrix& last, int n_options) const;

    // Full pass; the record holds every layer's output and the option logits.
    ActivationRecord forward(const ExampleFeatures& ex) const;

    // Resumes from a stored state. post_mlp: `state` is the output of block
    // `layer`; pre_block: `state` is the input of block `layer`.
    std::vector<float> logits_from(int layer, const TokenMatrix& state, const ExampleFeatures& ex,
                                   InterventionSite site = InterventionSite::post_mlp) const;

    double amplitude(Difficulty d) const { return cfg_.amplitudes[static_cast<size_t>(index_of(d))]; }
    // Orthonormal rows, orthogonal to the all-ones vector.
    const Eigen::MatrixXf& task_directions() const { return U_; }
    const Eigen::MatrixXf& answer_directions() const { return A_; }
    const Eigen::MatrixXf& evidence_directions() const { return B_; }

private:
    struct Block {
        Eigen::VectorXf gamma, beta;
        Eigen::MatrixXf w1; // width x d
        Eigen::VectorXf b1;
        Eigen::MatrixXf w2; // d x width
        Eigen::VectorXf b2;
    };

    SurrogateConfig cfg_;
    Eigen::MatrixXf U_;        // 7 x d
    Eigen::MatrixXf A_;        // 13 x d, read by the head
    Eigen::MatrixXf B_;        // 13 x d, answer evidence on image tokens
    Eigen::VectorXf img_carrier_, txt_carrier_;
    Eigen::MatrixXf nuisance_; // rank x d
    Eigen::MatrixXf content_;  // codebook x d
    Eigen::MatrixXf position_; // T x d
    std::vector<Block> blocks_;
};

} // namespace svtc
