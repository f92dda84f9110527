#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace svtc {

// Nonzero entries of a code vector, ascending by index.
struct SparseCode {
    std::vector<int> index;
    std::vector<double> value;

    std::size_t nnz() const { return index.size(); }
    double get(int j) const;
};

struct SaeParams {
    Eigen::MatrixXd W_enc; // m x d
    Eigen::VectorXd b_enc; // m
    Eigen::MatrixXd D;     // d x m, unit-norm columns f_j
    Eigen::VectorXd b_dec; // d
    int k = 0;
    bool pre_bias = false; // subtract b_dec before encoding

    int d() const { return static_cast<int>(D.rows()); }
    int m() const { return static_cast<int>(D.cols()); }
    void validate() const;
    // Largest |‖f_j‖ - 1| over all columns.
    double max_norm_deviation() const;
};

// Keeps the k largest entries (ties to the lowest index) and zeroes the rest.
Eigen::VectorXd topk(const Eigen::Ref<const Eigen::VectorXd>& v, int k);

// z = TopK_k(ReLU(W_enc h + b_enc)). Nonzeros are strictly positive.
SparseCode encode(const Eigen::Ref<const Eigen::VectorXd>& h, const SaeParams& p);
Eigen::VectorXd encode_dense(const Eigen::Ref<const Eigen::VectorXd>& h, const SaeParams& p);
// ĥ = D z + b_dec
Eigen::VectorXd decode(const SparseCode& z, const SaeParams& p);
Eigen::VectorXd decode_dense(const Eigen::Ref<const Eigen::VectorXd>& z, const SaeParams& p);

// W_enc = Dᵀ with D column-normalized Gaussian, b_enc = 0, b_dec = mean(data rows).
SaeParams init_sae(int d, int m, int k, const Eigen::MatrixXd& data_sample, std::uint64_t seed);

struct SaeTrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 256;
    int steps = 3000;
    int dead_window = 1000; // steps without activation before a feature counts as dead
    int checkpoint_every = 500;
    std::uint64_t seed = 11;
    bool pre_bias = false;
};

struct TrainStats {
    std::vector<double> step_loss; // minibatch loss per step
    double initial_loss = 0.0;     // mean ‖h - ĥ‖² over the training data at init
    double final_loss = 0.0;
    double final_relative_error = 0.0; // mean ‖h - ĥ‖ / ‖h‖
    int dead_features = 0;
    double max_norm_deviation = 0.0; // over every step
};

// Rows of `data` are activation vectors. The callback sees params at every
// checkpoint (step index, params).
using CheckpointFn = std::function<void(int, const SaeParams&)>;

SaeParams train_sae(const Eigen::MatrixXd& data, int m, int k, const SaeTrainConfig& config, TrainStats* stats,
                    const CheckpointFn& on_checkpoint = {});

// Mean squared reconstruction error ‖h − ĥ‖² over rows.
double reconstruction_loss(const Eigen::MatrixXd& data, const SaeParams& p);
double mean_relative_error(const Eigen::MatrixXd& data, const SaeParams& p);

// Analytic gradient of the mean reconstruction loss w.r.t. D for fixed codes.
Eigen::MatrixXd decoder_gradient(const Eigen::MatrixXd& data, const SaeParams& p);

// "SAE1" checkpoint with f32 little-endian payload.
void save_sae(const std::filesystem::path& path, const SaeParams& p);
// The checkpoint does not record pre_bias; callers pass the configured value.
SaeParams load_sae(const std::filesystem::path& path, bool pre_bias = false);

} // namespace svtc
