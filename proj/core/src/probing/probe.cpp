#include "svtc/probing/probe.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "svtc/common/error.hpp"
#include "svtc/common/parallel.hpp"
#include "svtc/common/seed.hpp"

namespace svtc {

int ProbeModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd z = weight * x + bias;
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < z.size(); ++c) {
        if (z(c) > z(best)) best = c;
    }
    return static_cast<int>(best);
}

double ProbeModel::accuracy(const Eigen::MatrixXd& X, const std::vector<int>& y) const {
    if (X.rows() == 0) return 0.0;
    long hits = 0;
    for (Eigen::Index i = 0; i < X.rows(); ++i) hits += predict(X.row(i).transpose()) == y[static_cast<size_t>(i)];
    return static_cast<double>(hits) / static_cast<double>(X.rows());
}

namespace {

struct Objective {
    const Eigen::MatrixXd& Z; // standardized features, N x d
    const std::vector<int>& y;
    double l2;

    // Value and, when requested, gradients.
    double eval(const Eigen::MatrixXd& W, const Eigen::VectorXd& b, Eigen::MatrixXd* gW, Eigen::VectorXd* gb) const {
        const auto n = static_cast<double>(Z.rows());
        Eigen::MatrixXd logits = Z * W.transpose();
        logits.rowwise() += b.transpose();
        double loss = 0.0;
        Eigen::MatrixXd resid(logits.rows(), logits.cols());
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            const double m = logits.row(i).maxCoeff();
            const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
            const double s = e.sum();
            loss += std::log(s) + m - logits(i, y[static_cast<size_t>(i)]);
            resid.row(i) = e / s;
            resid(i, y[static_cast<size_t>(i)]) -= 1.0;
        }
        loss = loss / n + 0.5 * l2 * W.squaredNorm();
        if (gW) *gW = resid.transpose() * Z / n + l2 * W;
        if (gb) *gb = resid.colwise().sum().transpose() / n;
        return loss;
    }
};

} // namespace

ProbeModel train_probe(const Eigen::MatrixXd& X, const std::vector<int>& y, int classes, const ProbeConfig& config,
                       std::uint64_t seed) {
    if (classes < 2) throw ValidationError("train_probe: need at least two classes");
    if (static_cast<std::size_t>(X.rows()) != y.size()) throw ValidationError("train_probe: label count mismatch");
    if (X.rows() < classes) throw ValidationError("train_probe: fewer examples than classes");
    std::vector<int> seen(static_cast<size_t>(classes), 0);
    for (int v : y) {
        if (v < 0 || v >= classes) throw ValidationError("train_probe: label " + std::to_string(v) + " out of range");
        seen[static_cast<size_t>(v)] = 1;
    }
    if (std::accumulate(seen.begin(), seen.end(), 0) < 2) {
        throw ValidationError("train_probe: degenerate single-class labels");
    }

    const Eigen::Index d = X.cols();
    const Eigen::RowVectorXd mean = X.colwise().mean();
    Eigen::RowVectorXd scale = ((X.rowwise() - mean).array().square().colwise().mean()).sqrt();
    for (Eigen::Index j = 0; j < d; ++j) {
        if (!(scale(j) > 1e-12)) scale(j) = 1.0;
    }
    const Eigen::MatrixXd Z = (X.rowwise() - mean).array().rowwise() / scale.array();

    Rng rng = make_rng(derive_seed(seed, "probe-init"));
    Eigen::MatrixXd W(classes, d);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = config.init_scale * standard_normal(rng);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(classes);

    Objective obj{Z, y, config.l2};
    ProbeModel model;
    Eigen::MatrixXd gW;
    Eigen::VectorXd gb;
    double f = obj.eval(W, b, &gW, &gb);
    model.objective.push_back(f);
    double step = 1.0;
    for (int it = 0; it < config.max_iters; ++it) {
        const double g2 = gW.squaredNorm() + gb.squaredNorm();
        if (g2 < 1e-18) break;
        double f_new = f;
        Eigen::MatrixXd W_new;
        Eigen::VectorXd b_new;
        bool accepted = false;
        for (int bt = 0; bt < 50; ++bt) {
            W_new = W - step * gW;
            b_new = b - step * gb;
            f_new = obj.eval(W_new, b_new, nullptr, nullptr);
            if (f_new <= f - 0.5 * step * g2) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
        const double improvement = f - f_new;
        W = std::move(W_new);
        b = std::move(b_new);
        f = obj.eval(W, b, &gW, &gb);
        model.objective.push_back(f);
        step *= 2.0;
        if (improvement < config.tol) break;
    }

    // Fold the standardization back into raw-feature weights.
    model.weight = W.array().rowwise() / scale.array();
    model.bias = b - model.weight * mean.transpose();
    return model;
}

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<double> shuffled_label_control(const Eigen::MatrixXd& train_X, const std::vector<int>& train_y,
                                           const Eigen::MatrixXd& val_X, const std::vector<int>& val_y, int classes,
                                           const std::vector<std::uint64_t>& seeds, const ProbeConfig& config,
                                           bool identity, int jobs) {
    std::vector<double> acc(seeds.size());
    parallel_for(seeds.size(), jobs, [&](std::size_t s) {
        std::vector<int> labels = train_y;
        if (!identity) {
            Rng rng = make_rng(derive_seed(seeds[s], "label-shuffle"));
            shuffle(labels.begin(), labels.end(), rng);
        }
        acc[s] = train_probe(train_X, labels, classes, config, seeds[s]).accuracy(val_X, val_y);
    });
    return acc;
}

ProbeReport layer_sweep(const std::vector<Eigen::MatrixXd>& train_features, const std::vector<int>& train_labels,
                        const std::vector<Eigen::MatrixXd>& val_features, const std::vector<int>& val_labels,
                        int classes, const std::vector<std::uint64_t>& seeds, const ProbeConfig& config, int jobs) {
    if (train_features.size() != val_features.size() || train_features.empty()) {
        throw ValidationError("layer_sweep: train/val layer counts differ or are empty");
    }
    if (seeds.empty()) throw ValidationError("layer_sweep: need at least one seed");
    const std::size_t L = train_features.size();
    const std::size_t S = seeds.size();
    std::vector<double> acc(L * S);
    parallel_for(L * S, jobs, [&](std::size_t job) {
        const std::size_t l = job / S;
        const std::size_t s = job % S;
        const auto model = train_probe(train_features[l], train_labels, classes, config, seeds[s]);
        acc[job] = model.accuracy(val_features[l], val_labels);
    });
    ProbeReport report;
    double best = -1.0;
    for (std::size_t l = 0; l < L; ++l) {
        LayerAccuracy la;
        la.layer = static_cast<int>(l);
        la.per_seed.assign(acc.begin() + static_cast<long>(l * S), acc.begin() + static_cast<long>((l + 1) * S));
        la.mean = mean_of(la.per_seed);
        la.std = std_of(la.per_seed);
        if (la.mean > best) {
            best = la.mean;
            report.best_layer = la.layer;
        }
        report.layers.push_back(std::move(la));
    }
    const auto shuffled = shuffled_label_control(train_features[static_cast<size_t>(report.best_layer)], train_labels,
                                                 val_features[static_cast<size_t>(report.best_layer)], val_labels,
                                                 classes, seeds, config, false, jobs);
    report.shuffled_mean = mean_of(shuffled);
    report.shuffled_std = std_of(shuffled);
    return report;
}

} // namespace svtc
