#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace svtc {

struct ProbeConfig {
    double l2 = 1e-4;
    int max_iters = 300;
    double tol = 1e-9;      // stop when the objective improves by less than this
    double init_scale = 1e-3;
};

// Multinomial logistic regression: logits = W x + b.
struct ProbeModel {
    Eigen::MatrixXd weight; // C x d
    Eigen::VectorXd bias;   // C
    std::vector<double> objective; // training objective per iteration, starting at init

    int classes() const { return static_cast<int>(bias.size()); }
    int predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;
    double accuracy(const Eigen::MatrixXd& X, const std::vector<int>& y) const;
};

// Full-batch gradient descent with Armijo backtracking on the mean cross
// entropy plus (l2/2)||W||^2, on standardized features. The seed sets the
// initial weights. Throws ValidationError for single-class input or N < C.
ProbeModel train_probe(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes, const ProbeConfig& config,
                       std::uint64_t seed);

struct LayerAccuracy {
    int layer = 0;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> per_seed;
};

struct ProbeReport {
    std::vector<LayerAccuracy> layers;
    int best_layer = 0;          // argmax of mean validation accuracy, lowest layer on ties
    double shuffled_mean = 0.0;  // shuffled-label control at best_layer
    double shuffled_std = 0.0;
};

// features[l] holds one pooled row per example for layer l.
ProbeReport layer_sweep(const std::vector<Eigen::MatrixXd>& train_features, const std::vector<int>& train_labels,
                        const std::vector<Eigen::MatrixXd>& val_features, const std::vector<int>& val_labels,
                        int classes, const std::vector<std::uint64_t>& seeds, const ProbeConfig& config, int jobs = 0);

// Trains on seeded permutations of the training labels and scores on the true
// validation labels. Returns one accuracy per seed. With `identity` the
// permutation is skipped, which recovers the unshuffled probe.
std::vector<double> shuffled_label_control(const Eigen::MatrixXd& train_X, const std::vector<int>& train_y,
                                           const Eigen::MatrixXd& val_X, const std::vector<int>& val_y, int classes,
                                           const std::vector<std::uint64_t>& seeds, const ProbeConfig& config,
                                           bool identity = false, int jobs = 0);

double mean_of(const std::vector<double>& v);
// Sample standard deviation (n - 1); zero for fewer than two values.
double std_of(const std::vector<double>& v);

} // namespace svtc
